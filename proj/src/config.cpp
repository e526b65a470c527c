#include "hallucdet/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "hallucdet/errors.hpp"

namespace hallucdet {

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  std::size_t end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] void fail(int line, const std::string& message) {
  throw parse_error("config line " + std::to_string(line) + ": " + message);
}

long long to_i64(const std::string& value, int line) {
  try {
    std::size_t used = 0;
    const long long parsed = std::stoll(value, &used);
    if (used != value.size()) fail(line, "trailing characters in integer '" + value + "'");
    return parsed;
  } catch (const parse_error&) {
    throw;
  } catch (const std::exception&) {
    fail(line, "expected an integer, got '" + value + "'");
  }
}

double to_f64(const std::string& value, int line) {
  try {
    std::size_t used = 0;
    const double parsed = std::stod(value, &used);
    if (used != value.size()) fail(line, "trailing characters in number '" + value + "'");
    return parsed;
  } catch (const parse_error&) {
    throw;
  } catch (const std::exception&) {
    fail(line, "expected a number, got '" + value + "'");
  }
}

std::vector<std::string> split_commas(const std::string& value) {
  std::vector<std::string> parts;
  std::string current;
  for (char c : value) {
    if (c == ',') {
      parts.push_back(trim(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  parts.push_back(trim(current));
  return parts;
}

std::vector<long> to_long_list(const std::string& value, int line) {
  std::vector<long> out;
  if (trim(value).empty()) return out;
  for (const std::string& part : split_commas(value))
    out.push_back(static_cast<long>(to_i64(part, line)));
  return out;
}

Vec to_f64_list(const std::string& value, int line) {
  Vec out;
  if (trim(value).empty()) return out;
  for (const std::string& part : split_commas(value)) out.push_back(to_f64(part, line));
  return out;
}

void apply_world_key(WorldConfig& world, const std::string& key, const std::string& value, int line) {
  if (key == "feature_dim") world.feature_dim = static_cast<int>(to_i64(value, line));
  else if (key == "base_classes") world.base_classes = static_cast<int>(to_i64(value, line));
  else if (key == "novel_classes") world.novel_classes = static_cast<int>(to_i64(value, line));
  else if (key == "num_modes") world.num_modes = static_cast<int>(to_i64(value, line));
  else if (key == "mode_scale") world.mode_scale = to_f64(value, line);
  else if (key == "iso_noise") world.iso_noise = to_f64(value, line);
  else if (key == "proposal_jitter") world.proposal_jitter = to_f64(value, line);
  else if (key == "mean_spread") world.mean_spread = to_f64(value, line);
  else if (key == "bg_components") world.bg_components = static_cast<int>(to_i64(value, line));
  else if (key == "bg_scale") world.bg_scale = to_f64(value, line);
  else if (key == "bg_mean_spread") world.bg_mean_spread = to_f64(value, line);
  else if (key == "bg_weights") world.bg_weights = to_f64_list(value, line);
  else fail(line, "unknown key '" + key + "' in section [world]");
}

void apply_train_key(TrainConfig& train, const std::string& key, const std::string& value, int line) {
  try {
    if (key == "shot") train.shot = static_cast<int>(to_i64(value, line));
    else if (key == "m") train.m = static_cast<int>(to_i64(value, line));
    else if (key == "em_iterations") train.em_iterations = static_cast<int>(to_i64(value, line));
    else if (key == "train_mode") train.train_mode = train_mode_from_name(value);
    else if (key == "proposal") train.proposal = proposal_mode_from_name(value);
    else if (key == "head") train.head_kind = head_kind_from_name(value);
    else if (key == "variant") train.variant = variant_from_name(value);
    else if (key == "init_mode") train.init_mode = init_mode_from_name(value);
    else if (key == "batch_size") train.batch_size = static_cast<int>(to_i64(value, line));
    else if (key == "fg_fraction") train.fg_fraction = to_f64(value, line);
    else if (key == "fg_per_class") train.fg_per_class = static_cast<int>(to_i64(value, line));
    else if (key == "base_lr") train.base_sgd.learning_rate = to_f64(value, line);
    else if (key == "base_iters") train.base_sgd.total_iterations = to_i64(value, line);
    else if (key == "base_milestones") train.base_sgd.decay_milestones = to_long_list(value, line);
    else if (key == "base_decay") train.base_sgd.decay_ratio = to_f64(value, line);
    else if (key == "ft_lr") train.finetune_sgd.learning_rate = to_f64(value, line);
    else if (key == "ft_iters") train.finetune_sgd.total_iterations = to_i64(value, line);
    else if (key == "ft_milestones") train.finetune_sgd.decay_milestones = to_long_list(value, line);
    else if (key == "ft_decay") train.finetune_sgd.decay_ratio = to_f64(value, line);
    else if (key == "halluc_lr") train.halluc_base_sgd.learning_rate = to_f64(value, line);
    else if (key == "halluc_iters") train.halluc_base_sgd.total_iterations = to_i64(value, line);
    else if (key == "halluc_milestones") train.halluc_base_sgd.decay_milestones = to_long_list(value, line);
    else if (key == "halluc_decay") train.halluc_base_sgd.decay_ratio = to_f64(value, line);
    else if (key == "halluc_ft_lr") train.halluc_finetune_sgd.learning_rate = to_f64(value, line);
    else if (key == "halluc_ft_iters") train.halluc_finetune_sgd.total_iterations = to_i64(value, line);
    else if (key == "halluc_ft_milestones")
      train.halluc_finetune_sgd.decay_milestones = to_long_list(value, line);
    else if (key == "halluc_ft_decay") train.halluc_finetune_sgd.decay_ratio = to_f64(value, line);
    else if (key == "pretrain_lr") train.novel_pretrain_sgd.learning_rate = to_f64(value, line);
    else if (key == "pretrain_iters") train.novel_pretrain_sgd.total_iterations = to_i64(value, line);
    else if (key == "pretrain_milestones")
      train.novel_pretrain_sgd.decay_milestones = to_long_list(value, line);
    else if (key == "pretrain_decay") train.novel_pretrain_sgd.decay_ratio = to_f64(value, line);
    else if (key == "base_pool_per_class") train.base_pool_per_class = static_cast<int>(to_i64(value, line));
    else if (key == "proposals_per_instance")
      train.proposals_per_instance = static_cast<int>(to_i64(value, line));
    else if (key == "test_fg_per_class") train.test_fg_per_class = static_cast<int>(to_i64(value, line));
    else if (key == "test_bg_total") train.test_bg_total = static_cast<int>(to_i64(value, line));
    else if (key == "head_init_std") train.head_init_std = to_f64(value, line);
    else if (key == "novel_init_std") train.novel_init_std = to_f64(value, line);
    else if (key == "halluc_init_noise") train.halluc_init_noise = to_f64(value, line);
    else if (key == "cosine_scale") train.cosine_scale = to_f64(value, line);
    else if (key == "transform_init_std") train.transform_init_std = to_f64(value, line);
    else if (key == "rpn_heads") train.rpn_heads = static_cast<int>(to_i64(value, line));
    else if (key == "rpn_init_std") train.rpn_init_std = to_f64(value, line);
    else if (key == "coop_threshold") train.coop_threshold = to_f64(value, line);
    else if (key == "div_epsilon") train.div_epsilon = to_f64(value, line);
    else if (key == "rpn_ce_weight") train.rpn_weights.ce = to_f64(value, line);
    else if (key == "rpn_div_weight") train.rpn_weights.div = to_f64(value, line);
    else if (key == "rpn_coop_weight") train.rpn_weights.coop = to_f64(value, line);
    else if (key == "tau") train.tau = to_f64(value, line);
    else fail(line, "unknown key '" + key + "' in section [train]");
  } catch (const parse_error&) {
    throw;
  } catch (const argument_error& e) {
    fail(line, e.what());
  }
}

void apply_run_key(ExperimentConfig& config, const std::string& key, const std::string& value, int line) {
  if (key == "seeds") {
    try {
      config.seeds = parse_seed_list(value);
    } catch (const std::exception& e) {
      fail(line, e.what());
    }
  } else if (key == "out") {
    config.out_dir = value;
  } else {
    fail(line, "unknown key '" + key + "' in section [run]");
  }
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& part : split_commas(text)) {
    if (part.empty()) throw argument_error("seed list: empty entry");
    // stoull would silently wrap a negative entry; accept digits only.
    if (part.find_first_not_of("0123456789") != std::string::npos)
      throw argument_error("seed list: '" + part + "' is not a seed");
    std::size_t used = 0;
    unsigned long long parsed = 0;
    try {
      parsed = std::stoull(part, &used);
    } catch (const std::exception&) {
      throw argument_error("seed list: '" + part + "' is not a seed");
    }
    if (used != part.size()) throw argument_error("seed list: '" + part + "' is not a seed");
    seeds.push_back(parsed);
  }
  return seeds;
}

std::vector<std::uint64_t> ExperimentConfig::effective_seeds() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> out;
  for (std::uint64_t s = 1; s <= 20; ++s) out.push_back(s);
  return out;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig config;
  std::istringstream stream(text);
  std::string raw_line;
  std::string section;
  int line_number = 0;
  while (std::getline(stream, raw_line)) {
    ++line_number;
    std::string line = trim(raw_line);
    const std::size_t comment = line.find('#');
    if (comment != std::string::npos) line = trim(line.substr(0, comment));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_number, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "world" && section != "train" && section != "run")
        fail(line_number, "unknown section [" + section + "]");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_number, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(line_number, "empty key");
    if (section.empty()) fail(line_number, "key '" + key + "' before any section header");
    if (section == "world") apply_world_key(config.world, key, value, line_number);
    else if (section == "train") apply_train_key(config.train, key, value, line_number);
    else apply_run_key(config, key, value, line_number);
  }
  return config;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str());
}

namespace {

std::string f64(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string long_list(const std::vector<long>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

void emit_sgd(std::ostringstream& out, const char* prefix, const SgdConfig& sgd) {
  out << prefix << "_lr = " << f64(sgd.learning_rate) << "\n";
  out << prefix << "_iters = " << sgd.total_iterations << "\n";
  out << prefix << "_milestones = " << long_list(sgd.decay_milestones) << "\n";
  out << prefix << "_decay = " << f64(sgd.decay_ratio) << "\n";
}

}  // namespace

std::string serialize_experiment_config(const ExperimentConfig& config) {
  std::ostringstream out;
  const WorldConfig& w = config.world;
  out << "[world]\n";
  out << "feature_dim = " << w.feature_dim << "\n";
  out << "base_classes = " << w.base_classes << "\n";
  out << "novel_classes = " << w.novel_classes << "\n";
  out << "num_modes = " << w.num_modes << "\n";
  out << "mode_scale = " << f64(w.mode_scale) << "\n";
  out << "iso_noise = " << f64(w.iso_noise) << "\n";
  out << "proposal_jitter = " << f64(w.proposal_jitter) << "\n";
  out << "mean_spread = " << f64(w.mean_spread) << "\n";
  out << "bg_components = " << w.bg_components << "\n";
  out << "bg_scale = " << f64(w.bg_scale) << "\n";
  out << "bg_mean_spread = " << f64(w.bg_mean_spread) << "\n";
  if (!w.bg_weights.empty()) {
    out << "bg_weights = ";
    for (std::size_t i = 0; i < w.bg_weights.size(); ++i) out << (i ? "," : "") << f64(w.bg_weights[i]);
    out << "\n";
  }

  const TrainConfig& t = config.train;
  out << "\n[train]\n";
  out << "shot = " << t.shot << "\n";
  out << "m = " << t.m << "\n";
  out << "em_iterations = " << t.em_iterations << "\n";
  out << "train_mode = " << train_mode_name(t.train_mode) << "\n";
  out << "proposal = " << proposal_mode_name(t.proposal) << "\n";
  out << "head = " << head_kind_name(t.head_kind) << "\n";
  out << "variant = " << variant_name(t.variant) << "\n";
  out << "init_mode = " << init_mode_name(t.init_mode) << "\n";
  out << "batch_size = " << t.batch_size << "\n";
  out << "fg_fraction = " << f64(t.fg_fraction) << "\n";
  out << "fg_per_class = " << t.fg_per_class << "\n";
  emit_sgd(out, "base", t.base_sgd);
  emit_sgd(out, "ft", t.finetune_sgd);
  emit_sgd(out, "halluc", t.halluc_base_sgd);
  emit_sgd(out, "halluc_ft", t.halluc_finetune_sgd);
  emit_sgd(out, "pretrain", t.novel_pretrain_sgd);
  out << "base_pool_per_class = " << t.base_pool_per_class << "\n";
  out << "proposals_per_instance = " << t.proposals_per_instance << "\n";
  out << "test_fg_per_class = " << t.test_fg_per_class << "\n";
  out << "test_bg_total = " << t.test_bg_total << "\n";
  out << "head_init_std = " << f64(t.head_init_std) << "\n";
  out << "novel_init_std = " << f64(t.novel_init_std) << "\n";
  out << "halluc_init_noise = " << f64(t.halluc_init_noise) << "\n";
  out << "cosine_scale = " << f64(t.cosine_scale) << "\n";
  out << "transform_init_std = " << f64(t.transform_init_std) << "\n";
  out << "rpn_heads = " << t.rpn_heads << "\n";
  out << "rpn_init_std = " << f64(t.rpn_init_std) << "\n";
  out << "coop_threshold = " << f64(t.coop_threshold) << "\n";
  out << "div_epsilon = " << f64(t.div_epsilon) << "\n";
  out << "rpn_ce_weight = " << f64(t.rpn_weights.ce) << "\n";
  out << "rpn_div_weight = " << f64(t.rpn_weights.div) << "\n";
  out << "rpn_coop_weight = " << f64(t.rpn_weights.coop) << "\n";
  out << "tau = " << f64(t.tau) << "\n";

  out << "\n[run]\n";
  out << "seeds = ";
  const std::vector<std::uint64_t> seeds = config.effective_seeds();
  for (std::size_t i = 0; i < seeds.size(); ++i) out << (i ? "," : "") << seeds[i];
  out << "\n";
  out << "out = " << config.out_dir << "\n";
  return out.str();
}

}  // namespace hallucdet
