#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hallucdet/config.hpp"
#include "hallucdet/csv.hpp"
#include "hallucdet/errors.hpp"
#include "hallucdet/pipeline.hpp"
#include "hallucdet/report.hpp"
#include "hallucdet/version.hpp"

namespace fs = std::filesystem;
using namespace hallucdet;

namespace {

struct CliArgs {
  std::string config_path;
  std::optional<std::string> seed_list;
  std::optional<int> shots;
  std::optional<int> m;
  std::optional<std::string> proposal;
  std::optional<std::string> head;
  std::optional<std::string> variant;
  std::optional<int> em_iters;
  std::optional<std::string> train_mode;
  std::optional<std::string> out;
};

ExperimentConfig build_config(const CliArgs& args) {
  ExperimentConfig config;
  if (!args.config_path.empty()) config = load_experiment_config(args.config_path);
  if (args.seed_list) config.seeds = parse_seed_list(*args.seed_list);
  if (args.shots) config.train.shot = *args.shots;
  if (args.m) config.train.m = *args.m;
  if (args.proposal) config.train.proposal = proposal_mode_from_name(*args.proposal);
  if (args.head) config.train.head_kind = head_kind_from_name(*args.head);
  if (args.variant) config.train.variant = variant_from_name(*args.variant);
  if (args.em_iters) config.train.em_iterations = *args.em_iters;
  if (args.train_mode) config.train.train_mode = train_mode_from_name(*args.train_mode);
  if (args.out) config.out_dir = *args.out;
  return config;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw io_error("write to '" + path.string() + "' failed");
}

std::string manifest_text(const ExperimentConfig& config, const std::string& command,
                          const std::string& extra) {
  std::string text = "# ";
  text += kVersionString;
  text += "\n# command: " + command + "\n";
  if (!extra.empty()) text += "# " + extra + "\n";
  text += serialize_experiment_config(config);
  return text;
}

std::vector<int> novel_ids(const WorldConfig& world) {
  std::vector<int> ids;
  for (int c = world.base_classes; c < world.base_classes + world.novel_classes; ++c) ids.push_back(c);
  return ids;
}

int cmd_gen_world(const ExperimentConfig& config) {
  config.world.validate();
  const std::uint64_t seed = config.effective_seeds().front();
  Rng root(seed);
  Rng world_rng = root.stream("world");
  const SyntheticWorld world = generate_world(config.world, world_rng);
  fs::create_directories(config.out_dir);
  world_to_kv(world).write((fs::path(config.out_dir) / "world.kv").string());
  write_file(fs::path(config.out_dir) / "manifest.txt", manifest_text(config, "gen-world", ""));
  std::cout << "world: " << config.world.feature_dim << "-dim, " << config.world.base_classes
            << " base / " << config.world.novel_classes << " novel classes, seed " << seed << "\n";
  std::cout << "mode orthonormality error: " << format_f64(world.mode_orthonormality_error()) << "\n";
  std::cout << "wrote " << (fs::path(config.out_dir) / "world.kv").string() << "\n";
  return 0;
}

std::string run_cell_csv(const ExperimentConfig& config, const TrainConfig& train) {
  const MultiReport report = run_multiseed(config.world, train, config.effective_seeds());
  return report_to_csv(report, cell_from_config(train), novel_ids(config.world));
}

int cmd_train(const ExperimentConfig& config) {
  const std::string csv = run_cell_csv(config, config.train);
  fs::create_directories(config.out_dir);
  const fs::path csv_path = fs::path(config.out_dir) / "report.csv";
  write_file(csv_path, csv);
  write_file(fs::path(config.out_dir) / "manifest.txt", manifest_text(config, "train", ""));
  const CellSummary cell = summarize_cell(parse_report_csv(csv), csv_path.string());
  const std::string summary = render_report({cell});
  write_file(fs::path(config.out_dir) / "summary.md", summary);
  std::cout << summary;
  return 0;
}

int cmd_ablate(const ExperimentConfig& config, const std::string& axis) {
  struct Cell {
    std::string name;
    TrainConfig train;
  };
  std::vector<Cell> cells;
  const TrainConfig& base = config.train;
  if (axis == "em_vs_joint") {
    TrainConfig joint = base;
    joint.train_mode = TrainMode::joint;
    joint.em_iterations = 2;
    TrainConfig em1 = base;
    em1.train_mode = TrainMode::em;
    em1.em_iterations = 1;
    TrainConfig em2 = base;
    em2.train_mode = TrainMode::em;
    em2.em_iterations = 2;
    cells = {{"joint", joint}, {"em1", em1}, {"em2", em2}};
  } else if (axis == "num_halluc") {
    for (int m : {0, 1, 2, 3, 5, 10, 20}) {
      TrainConfig t = base;
      t.m = m;
      cells.push_back({"m" + std::to_string(m), t});
    }
  } else if (axis == "head_kind") {
    for (HeadKind kind : {HeadKind::cosine, HeadKind::fully_connected}) {
      TrainConfig t = base;
      t.head_kind = kind;
      cells.push_back({head_kind_name(kind), t});
    }
  } else if (axis == "variant") {
    for (HallucinatorVariant v :
         {HallucinatorVariant::none, HallucinatorVariant::conservative, HallucinatorVariant::aggressive}) {
      TrainConfig t = base;
      t.variant = v;
      cells.push_back({variant_name(v), t});
    }
  } else if (axis == "shots") {
    for (int k : {1, 2, 3, 5, 10}) {
      TrainConfig t = base;
      t.shot = k;
      cells.push_back({"k" + std::to_string(k), t});
    }
  } else {
    throw argument_error("unknown ablation axis '" + axis +
                         "' (expected em_vs_joint, num_halluc, head_kind, variant, shots)");
  }

  std::vector<std::pair<std::string, std::string>> outputs;  // filename -> csv text
  std::vector<CellSummary> summaries;
  for (const Cell& cell : cells) {
    const std::string file = axis + "_" + cell.name + ".csv";
    std::cout << "running cell " << cell.name << " (" << cell_label(cell_from_config(cell.train)) << ")\n";
    const std::string csv = run_cell_csv(config, cell.train);
    summaries.push_back(summarize_cell(parse_report_csv(csv), file));
    outputs.emplace_back(file, csv);
  }

  fs::create_directories(config.out_dir);
  for (const auto& [file, csv] : outputs) write_file(fs::path(config.out_dir) / file, csv);
  const std::string summary = render_report(summaries);
  write_file(fs::path(config.out_dir) / "summary.md", summary);
  write_file(fs::path(config.out_dir) / "manifest.txt", manifest_text(config, "ablate", "axis: " + axis));
  std::cout << summary;
  return 0;
}

int cmd_report(const std::vector<std::string>& paths, const std::optional<std::string>& out) {
  std::vector<CellSummary> summaries;
  for (const std::string& path : paths) summaries.push_back(summarize_cell(load_report_csv(path), path));
  const std::string summary = render_report(summaries);
  std::cout << summary;
  if (out) {
    fs::create_directories(*out);
    write_file(fs::path(*out) / "summary.md", summary);
  }
  return 0;
}

void add_common_options(CLI::App* sub, CliArgs& args) {
  sub->add_option("--config", args.config_path, "sectioned key=value config file");
  sub->add_option("--seed-list", args.seed_list, "comma-separated seeds (default 1..20)");
  sub->add_option("--shots", args.shots, "foreground instances per novel class");
  sub->add_option("--m", args.m, "hallucinated examples per novel class");
  sub->add_option("--proposal", args.proposal, "proposal mode: single | corpns");
  sub->add_option("--head", args.head, "classifier head: cosine | fc");
  sub->add_option("--variant", args.variant, "hallucinator: conservative | aggressive | none");
  sub->add_option("--em-iters", args.em_iters, "alternating-training rounds: 1 | 2");
  sub->add_option("--train-mode", args.train_mode, "em | joint");
  sub->add_option("--out", args.out, "output directory (default from config, else 'runs')");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(kVersionString) + " - feature-space hallucination experiments"};
  app.require_subcommand(1);

  CliArgs args;
  CLI::App* gen = app.add_subcommand("gen-world", "sample a feature world and write it as a kv file");
  add_common_options(gen, args);
  CLI::App* train = app.add_subcommand("train", "run the configured experiment over all seeds");
  add_common_options(train, args);
  CLI::App* ablate =
      app.add_subcommand("ablate", "sweep one axis with shared seeds, writing one csv per cell");
  std::string axis;
  ablate->add_option("axis", axis, "em_vs_joint | num_halluc | head_kind | variant | shots")->required();
  add_common_options(ablate, args);
  CLI::App* report = app.add_subcommand("report", "render a markdown summary from csv reports");
  std::vector<std::string> csv_paths;
  report->add_option("paths", csv_paths, "csv report files")->required();
  report->add_option("--out", args.out, "also write summary.md to this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (report->parsed()) return cmd_report(csv_paths, args.out);
    const ExperimentConfig config = build_config(args);
    if (gen->parsed()) return cmd_gen_world(config);
    if (train->parsed()) return cmd_train(config);
    return cmd_ablate(config, axis);
  } catch (const argument_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
