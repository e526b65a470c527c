#include <string>

#include "doctest.h"
#include "hallucdet/config.hpp"
#include "hallucdet/csv.hpp"
#include "hallucdet/report.hpp"

using namespace hallucdet;

namespace {

MultiReport fake_report() {
  MultiReport report;
  SeedRow a;
  a.seed = 3;
  a.eval.novel_ap = {0.5, 0.7};
  a.eval.mean_novel_ap = 0.6;
  a.eval.tp_count = 80;
  a.eval.fp_count = 4;
  SeedRow b;
  b.seed = 4;
  b.eval.novel_ap = {0.9, 0.5};
  b.eval.mean_novel_ap = 0.7;
  b.eval.tp_count = 90;
  b.eval.fp_count = 2;
  report.rows = {a, b};
  report.aggregate.mean_novel_ap = 0.65;
  double hw = 0.0;
  mean_and_half_width({0.6, 0.7}, &report.aggregate.mean_novel_ap, &report.aggregate.ap_half_width);
  mean_and_half_width({80.0, 90.0}, &report.aggregate.mean_tp, &report.aggregate.tp_half_width);
  mean_and_half_width({4.0, 2.0}, &report.aggregate.mean_fp, &report.aggregate.fp_half_width);
  (void)hw;
  report.aggregate.mean_class_ap = {0.7, 0.6};
  return report;
}

}  // namespace

TEST_CASE("an empty config file means the default experiment") {
  const ExperimentConfig config = parse_experiment_config("");
  CHECK(config.world.feature_dim == 32);
  CHECK(config.world.base_classes == 15);
  CHECK(config.world.novel_classes == 5);
  CHECK(config.train.m == 20);
  CHECK(config.train.shot == 1);
  CHECK(config.train.batch_size == 400);
  CHECK(config.out_dir == "runs");
  CHECK(config.seeds.empty());
  const auto seeds = config.effective_seeds();
  REQUIRE(seeds.size() == 20);
  CHECK(seeds.front() == 1);
  CHECK(seeds.back() == 20);
}

TEST_CASE("comments, blank lines and explicit values parse") {
  const std::string text =
      "# benchmark tweak\n"
      "\n"
      "[world]\n"
      "feature_dim = 16\n"
      "bg_weights = 0.25, 0.25, 0.5\n"
      "bg_components = 3\n"
      "\n"
      "[train]\n"
      "m = 5\n"
      "head = fc\n"
      "proposal = corpns\n"
      "variant = aggressive\n"
      "train_mode = joint\n"
      "ft_milestones = 100, 200\n"
      "\n"
      "[run]\n"
      "seeds = 7, 9, 11\n"
      "out = /tmp/xyz\n";
  const ExperimentConfig config = parse_experiment_config(text);
  CHECK(config.world.feature_dim == 16);
  CHECK(config.world.bg_weights == Vec{0.25, 0.25, 0.5});
  CHECK(config.train.m == 5);
  CHECK(config.train.head_kind == HeadKind::fully_connected);
  CHECK(config.train.proposal == ProposalMode::corpns);
  CHECK(config.train.variant == HallucinatorVariant::aggressive);
  CHECK(config.train.train_mode == TrainMode::joint);
  CHECK(config.train.finetune_sgd.decay_milestones == std::vector<long>{100, 200});
  CHECK(config.seeds == std::vector<std::uint64_t>{7, 9, 11});
  CHECK(config.out_dir == "/tmp/xyz");
}

TEST_CASE("serialize -> parse -> serialize is byte-stable and field-exact") {
  ExperimentConfig config;
  config.world.feature_dim = 24;
  config.world.mean_spread = 3.75;
  config.train.shot = 5;
  config.train.m = 7;
  config.train.em_iterations = 2;
  config.train.head_kind = HeadKind::fully_connected;
  config.train.variant = HallucinatorVariant::aggressive;
  config.train.init_mode = InitMode::coco_novel_pretrain;
  config.train.finetune_sgd = {0.07, 900, {300, 700}, 0.2};
  config.train.halluc_finetune_sgd = {3e-4, 900, {250}, 0.5};
  config.train.rpn_weights.div = 0.0;
  config.train.tau = 0.45;
  config.seeds = {2, 4, 8};
  config.out_dir = "elsewhere";

  const std::string text = serialize_experiment_config(config);
  const ExperimentConfig back = parse_experiment_config(text);

  CHECK(back.world.feature_dim == 24);
  CHECK(back.world.mean_spread == 3.75);
  CHECK(back.train.shot == 5);
  CHECK(back.train.m == 7);
  CHECK(back.train.em_iterations == 2);
  CHECK(back.train.head_kind == HeadKind::fully_connected);
  CHECK(back.train.variant == HallucinatorVariant::aggressive);
  CHECK(back.train.init_mode == InitMode::coco_novel_pretrain);
  CHECK(back.train.finetune_sgd.learning_rate == 0.07);
  CHECK(back.train.finetune_sgd.total_iterations == 900);
  CHECK(back.train.finetune_sgd.decay_milestones == std::vector<long>{300, 700});
  CHECK(back.train.finetune_sgd.decay_ratio == 0.2);
  CHECK(back.train.halluc_finetune_sgd.learning_rate == 3e-4);
  CHECK(back.train.rpn_weights.div == 0.0);
  CHECK(back.train.tau == 0.45);
  CHECK(back.seeds == config.seeds);
  CHECK(back.out_dir == "elsewhere");

  CHECK(serialize_experiment_config(back) == text);
}

TEST_CASE("default config serializes and reparses to the defaults") {
  const ExperimentConfig defaults;
  const ExperimentConfig back = parse_experiment_config(serialize_experiment_config(defaults));
  CHECK(back.train.batch_size == defaults.train.batch_size);
  CHECK(back.train.base_sgd.learning_rate == defaults.train.base_sgd.learning_rate);
  CHECK(back.train.halluc_base_sgd.learning_rate == defaults.train.halluc_base_sgd.learning_rate);
  CHECK(back.train.novel_pretrain_sgd.total_iterations ==
        defaults.train.novel_pretrain_sgd.total_iterations);
  CHECK(back.world.bg_scale == defaults.world.bg_scale);
  CHECK(back.train.rpn_weights.ce == defaults.train.rpn_weights.ce);
}

TEST_CASE("config parse errors carry line numbers") {
  try {
    parse_experiment_config("[world]\nfeature_dim = 32\nnonsense_key = 1\n");
    FAIL("should have thrown");
  } catch (const parse_error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  try {
    parse_experiment_config("[world]\nfeature_dim = not_a_number\n");
    FAIL("should have thrown");
  } catch (const parse_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  CHECK_THROWS_AS(parse_experiment_config("[mystery]\n"), parse_error);
  CHECK_THROWS_AS(parse_experiment_config("feature_dim = 1\n"), parse_error);  // key before any section
  CHECK_THROWS_AS(parse_experiment_config("[train]\nhead = sigmoid\n"), parse_error);
}

TEST_CASE("seed lists parse strictly") {
  CHECK(parse_seed_list("1,2,3") == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(parse_seed_list(" 4 , 5 ") == std::vector<std::uint64_t>{4, 5});
  CHECK(parse_seed_list("10") == std::vector<std::uint64_t>{10});
  CHECK_THROWS_AS(parse_seed_list(""), argument_error);
  CHECK_THROWS_AS(parse_seed_list("1,,2"), argument_error);
  CHECK_THROWS_AS(parse_seed_list("1,two"), argument_error);
  CHECK_THROWS_AS(parse_seed_list("-3"), argument_error);  // stoull would have wrapped this
}

TEST_CASE("cell_from_config maps joint mode to em_iters zero") {
  TrainConfig config;
  config.shot = 3;
  config.m = 10;
  config.em_iterations = 2;
  CellId cell = cell_from_config(config);
  CHECK(cell.shot == 3);
  CHECK(cell.m == 10);
  CHECK(cell.em_iters == 2);

  config.train_mode = TrainMode::joint;
  cell = cell_from_config(config);
  CHECK(cell.em_iters == 0);
}

TEST_CASE("csv header is the fixed schema") {
  CHECK(csv_header({15, 16}) ==
        "seed,shot,proposal_mode,head_kind,variant,m,em_iters,mean_novel_ap,tp_count,fp_count,"
        "ap_class_15,ap_class_16");
}

TEST_CASE("csv render -> parse round-trip") {
  const MultiReport report = fake_report();
  CellId cell;
  cell.shot = 2;
  cell.proposal = ProposalMode::corpns;
  cell.head = HeadKind::fully_connected;
  cell.variant = HallucinatorVariant::none;
  cell.m = 0;
  cell.em_iters = 1;

  const std::string text = report_to_csv(report, cell, {15, 16});
  const CsvReport parsed = parse_report_csv(text);

  CHECK(parsed.novel_class_ids == std::vector<int>{15, 16});
  REQUIRE(parsed.seed_rows.size() == 2);
  CHECK(parsed.seed_rows[0].seed == 3);
  CHECK(parsed.seed_rows[0].cell.shot == 2);
  CHECK(parsed.seed_rows[0].cell.proposal == ProposalMode::corpns);
  CHECK(parsed.seed_rows[0].cell.head == HeadKind::fully_connected);
  CHECK(parsed.seed_rows[0].cell.variant == HallucinatorVariant::none);
  CHECK(parsed.seed_rows[0].cell.m == 0);
  CHECK(parsed.seed_rows[0].cell.em_iters == 1);
  CHECK(parsed.seed_rows[0].mean_novel_ap == 0.6);
  CHECK(parsed.seed_rows[0].tp == 80.0);
  CHECK(parsed.seed_rows[0].class_ap == std::vector<double>{0.5, 0.7});
  CHECK(parsed.seed_rows[1].seed == 4);
  CHECK(parsed.aggregate.is_aggregate);
  CHECK(parsed.aggregate.mean_novel_ap == 0.65);
  CHECK(parsed.aggregate.class_ap == std::vector<double>{0.7, 0.6});

  // Rendering is byte-stable.
  CHECK(report_to_csv(report, cell, {15, 16}) == text);
}

TEST_CASE("csv parser rejects corrupt input") {
  const MultiReport report = fake_report();
  const CellId cell;
  const std::string good = report_to_csv(report, cell, {15, 16});

  CHECK_THROWS_AS(parse_report_csv(""), parse_error);
  CHECK_THROWS_AS(parse_report_csv("totally,wrong,header\n"), parse_error);

  // Drop the AGGREGATE row.
  const std::string no_agg = good.substr(0, good.find("AGGREGATE"));
  CHECK_THROWS_AS(parse_report_csv(no_agg), parse_error);

  // A row after AGGREGATE is illegal.
  CHECK_THROWS_AS(parse_report_csv(good + "5,1,single,cosine,conservative,20,2,0.5,1,1,0.5,0.5\n"),
                  parse_error);

  // Wrong field count.
  std::string short_row = good;
  short_row.insert(short_row.find('\n') + 1, "3,1,single,cosine\n");
  CHECK_THROWS_AS(parse_report_csv(short_row), parse_error);

  // Garbage numeric field.
  std::string bad_num = good;
  const auto pos = bad_num.find("0.59999999999999998");
  if (pos != std::string::npos) bad_num.replace(pos, 3, "x.x");
  CHECK_THROWS_AS(parse_report_csv(bad_num), parse_error);
}

TEST_CASE("summarize_cell recomputes and cross-checks the aggregate") {
  const MultiReport report = fake_report();
  const CellId cell;
  const CsvReport parsed = parse_report_csv(report_to_csv(report, cell, {15, 16}));

  const CellSummary summary = summarize_cell(parsed, "unit");
  CHECK(summary.num_seeds == 2);
  CHECK(summary.mean_ap == doctest::Approx(0.65).epsilon(1e-12));
  CHECK(summary.mean_tp == doctest::Approx(85.0).epsilon(1e-12));
  CHECK(summary.mean_fp == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(summary.source == "unit");
  CHECK(summary.novel_class_ids == std::vector<int>{15, 16});
  CHECK(summary.mean_class_ap[0] == doctest::Approx(0.7).epsilon(1e-12));

  // Tamper with the stored aggregate: the summary must refuse.
  CsvReport tampered = parsed;
  tampered.aggregate.mean_novel_ap += 0.1;
  CHECK_THROWS_AS(summarize_cell(tampered, "unit"), parse_error);

  // A seed row whose cell identity disagrees with the rest must refuse too.
  CsvReport mixed = parsed;
  mixed.seed_rows[1].cell.m += 1;
  CHECK_THROWS_AS(summarize_cell(mixed, "unit"), parse_error);
}

TEST_CASE("cell labels are human-readable and distinct") {
  CellId a;
  CellId b;
  b.m = 0;
  b.em_iters = 0;
  const std::string la = cell_label(a);
  const std::string lb = cell_label(b);
  CHECK(la != lb);
  CHECK(la.find("m=20") != std::string::npos);
  CHECK(lb.find("joint") != std::string::npos);
}

TEST_CASE("render_report emits a block per cell and a comparison verdict") {
  const MultiReport with = fake_report();
  MultiReport without = fake_report();
  for (SeedRow& row : without.rows) {
    row.eval.mean_novel_ap -= 0.1;
    row.eval.novel_ap[0] -= 0.1;
    row.eval.novel_ap[1] -= 0.1;
  }
  without.aggregate.mean_novel_ap -= 0.1;
  without.aggregate.mean_class_ap[0] -= 0.1;
  without.aggregate.mean_class_ap[1] -= 0.1;

  CellId cell_with;
  CellId cell_without;
  cell_without.m = 0;

  const CellSummary s_with =
      summarize_cell(parse_report_csv(report_to_csv(with, cell_with, {15, 16})), "a.csv");
  const CellSummary s_without =
      summarize_cell(parse_report_csv(report_to_csv(without, cell_without, {15, 16})), "b.csv");

  const std::string md = render_report({s_with, s_without});
  CHECK(md.find(cell_label(cell_with)) != std::string::npos);
  CHECK(md.find(cell_label(cell_without)) != std::string::npos);
  CHECK(md.find("0.65") != std::string::npos);   // the with-hallucination mean
  CHECK(md.find("gain") != std::string::npos);   // the comparison section
  CHECK(md.find("PASS") != std::string::npos);   // 0.1 gain clears the 0.02 bar
}
