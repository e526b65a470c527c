#pragma once

namespace hallucdet {

inline constexpr const char* kVersionString = "hallucdet 0.1.0";

}  // namespace hallucdet
