#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hyperskel/checkpoint.hpp"
#include "hyperskel/config.hpp"
#include "hyperskel/dataset.hpp"
#include "hyperskel/export.hpp"
#include "hyperskel/gradcheck.hpp"
#include "hyperskel/train.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace hyperskel;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "hyperskel-tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

DataConfig small_data() {
  DataConfig d;
  d.num_classes = 4;
  d.samples_per_class = 10;
  d.frames = 12;
  d.min_frames = 8;
  return d;
}

TrainConfig small_config(Strategy s = Strategy::kToken) {
  TrainConfig cfg;
  cfg.data = small_data();
  cfg.d_hyp = 8;
  cfg.d_gcn = 8;
  cfg.d_model = 8;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 8;
  cfg.strategy = s;
  return cfg;
}

const SyntheticDataset& small_dataset() {
  static const SyntheticDataset data = generate_dataset(small_data());
  return data;
}

}  // namespace

TEST(Config, ParsesKeyValueLinesWithComments) {
  const TrainConfig cfg = parse_config(
      "# desk run\n"
      "strategy = pooled\n"
      "init_c = 0.5   # trailing comment\n"
      "\n"
      "epochs=3\n"
      "num_classes = 6\n");
  EXPECT_EQ(cfg.strategy, Strategy::kPooled);
  EXPECT_EQ(cfg.init_c, 0.5);
  EXPECT_EQ(cfg.epochs, 3u);
  EXPECT_EQ(cfg.data.num_classes, 6u);
  EXPECT_EQ(cfg.seed, 42u);
}

TEST(Config, UnknownKeyAndBadValuesThrow) {
  EXPECT_THROW(parse_config("no_such_key = 1\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("strategy = hyperbolic\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("epochs = three\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("init_c\n"), std::invalid_argument);
}

TEST(Config, DumpRoundTripsExactly) {
  TrainConfig cfg;
  cfg.init_c = 0.1 + 0.2;
  cfg.strategy = Strategy::kEuclideanPooled;
  cfg.curvatures = {0.25, 1.0 / 3.0};
  cfg.data.seed = 123456789012345ull;
  const TrainConfig back = parse_config(dump_config(cfg));
  EXPECT_EQ(config_entries(back), config_entries(cfg));
  EXPECT_EQ(back.init_c, cfg.init_c);
}

TEST(Dataset, SameSeedGivesByteIdenticalFiles) {
  const fs::path dir = scratch("gen");
  save_dataset(generate_dataset(small_data()), (dir / "a.jsonl").string());
  save_dataset(generate_dataset(small_data()), (dir / "b.jsonl").string());
  const std::string a = slurp(dir / "a.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b.jsonl"));
  DataConfig other = small_data();
  other.seed += 1;
  save_dataset(generate_dataset(other), (dir / "c.jsonl").string());
  EXPECT_NE(a, slurp(dir / "c.jsonl"));
}

TEST(Dataset, SaveLoadRoundTrip) {
  const fs::path dir = scratch("roundtrip");
  const auto& data = small_dataset();
  save_dataset(data, (dir / "d.jsonl").string());
  const SyntheticDataset back = load_dataset((dir / "d.jsonl").string());
  ASSERT_EQ(back.samples.size(), data.samples.size());
  EXPECT_EQ(back.vocab, data.vocab);
  EXPECT_EQ(back.class_tokens, data.class_tokens);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].label, data.samples[i].label);
    EXPECT_EQ(back.samples[i].tokens, data.samples[i].tokens);
    for (std::size_t p = 0; p < kNumParts; ++p) {
      EXPECT_EQ(back.samples[i].keypoints[p], data.samples[i].keypoints[p]);
    }
  }
}

TEST(Dataset, TwoLabelsAreBalanced) {
  DataConfig d = small_data();
  d.num_classes = 2;
  d.samples_per_class = 7;
  const auto data = generate_dataset(d);
  int count[2] = {0, 0};
  for (const auto& s : data.samples) ++count[s.label];
  EXPECT_LE(std::abs(count[0] - count[1]), 1);
  EXPECT_NE(data.class_tokens[0], data.class_tokens[1]);
}

TEST(Dataset, TokensAreClassConsistentAndVocabIsSmall) {
  const auto data = generate_dataset(DataConfig{});
  EXPECT_LE(data.vocab.size(), 64u);
  for (const auto& s : data.samples) EXPECT_EQ(s.tokens, data.class_tokens[s.label]);
  for (std::size_t a = 0; a < data.num_classes(); ++a) {
    for (std::size_t b = a + 1; b < data.num_classes(); ++b) {
      EXPECT_NE(data.class_tokens[a], data.class_tokens[b]);
    }
  }
}

TEST(Dataset, HandsAndFaceAreFinerThanBody) {
  const auto& data = small_dataset();
  std::array<double, kNumParts> extent{};
  for (const auto& s : data.samples) {
    for (std::size_t p = 0; p < kNumParts; ++p) {
      const auto& k = s.keypoints[p];
      double lo = 1e300, hi = -1e300;
      for (std::size_t i = 0; i < k.size(); i += 2) {
        lo = std::min(lo, k[i]);
        hi = std::max(hi, k[i]);
      }
      extent[p] += hi - lo;
    }
  }
  for (std::size_t p = 1; p < kNumParts; ++p) EXPECT_LT(extent[p], 0.5 * extent[0]) << kPartNames[p];
}

TEST(Dataset, SplitsPartitionTheSamples) {
  const auto& data = small_dataset();
  auto ev = eval_indices(data, 5), tr = train_indices(data, 5);
  EXPECT_EQ(ev.size(), 8u);
  EXPECT_EQ(ev.size() + tr.size(), data.samples.size());
  std::vector<std::size_t> all = ev;
  all.insert(all.end(), tr.begin(), tr.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
}

TEST(Train, NoneStrategyHasZeroHypLoss) {
  TrainOptions opts;
  opts.write_files = false;
  const auto r = train(small_config(Strategy::kNone), small_dataset(), opts);
  for (const auto& e : r.history) {
    EXPECT_EQ(e.hyp, 0.0);
    EXPECT_EQ(e.total, e.ce);
  }
  // The alignment heads and the curvature receive no gradient, so they stay put.
  EXPECT_EQ(r.model->ball.c(), 1.5);
}

TEST(Train, MetricsAreDeterministicAndAlphaBounded) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  TrainConfig cfg = small_config();
  cfg.out_dir = a.string();
  const auto ra = train(cfg, small_dataset());
  cfg.out_dir = b.string();
  const auto rb = train(cfg, small_dataset());
  const std::string ma = slurp(ra.metrics_path);
  EXPECT_FALSE(ma.empty());
  EXPECT_EQ(ma, slurp(rb.metrics_path));
  const auto pa = ra.model->state_tensors(), pb = rb.model->state_tensors();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].tensor->to_vector(), pb[i].tensor->to_vector()) << pa[i].name;
  }

  std::istringstream lines(ma);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(nlohmann::json::parse(line).at("format"), "hyperskel-metrics");
  std::size_t epochs = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (!j.contains("epoch")) continue;
    ++epochs;
    for (const char* k : {"ce", "hyp", "total", "c"}) EXPECT_TRUE(std::isfinite(j.at(k).get<double>()));
    EXPECT_GE(j.at("alpha_min").get<double>(), 0.1);
    EXPECT_LE(j.at("alpha_max").get<double>(), 1.0);
  }
  EXPECT_EQ(epochs, cfg.epochs);
}

TEST(Train, EuclideanStrategyKeepsCurvatureFrozen) {
  TrainOptions opts;
  opts.write_files = false;
  const auto r = train(small_config(Strategy::kEuclideanPooled), small_dataset(), opts);
  for (const auto& e : r.history) EXPECT_NEAR(e.c, kEuclideanCurvature, 1e-15);
}

TEST(Train, PooledStepsAreFasterThanToken) {
  auto per_step = [](Strategy s) {
    TrainConfig cfg;
    cfg.data = small_data();
    cfg.data.num_classes = 8;
    cfg.data.frames = 24;
    cfg.data.min_frames = 20;
    cfg.strategy = s;
    TrainOptions opts;
    opts.write_files = false;
    opts.evaluate = false;
    opts.max_steps = 6;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = train(cfg, generate_dataset(cfg.data), opts);
    (void)r;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  // Best of two to damp scheduler noise.
  const double pooled = std::min(per_step(Strategy::kPooled), per_step(Strategy::kPooled));
  const double token = std::min(per_step(Strategy::kToken), per_step(Strategy::kToken));
  EXPECT_LT(pooled, token);
}

TEST(Checkpoint, RoundTripRestoresEveryTensor) {
  const fs::path dir = scratch("ckpt");
  TrainConfig cfg = small_config();
  cfg.out_dir = dir.string();
  const auto r = train(cfg, small_dataset());
  auto loaded = load_checkpoint(r.checkpoint_path);
  auto a = r.model->state_tensors(), b = loaded->state_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].tensor->to_vector(), b[i].tensor->to_vector()) << a[i].name;
  }
  const auto idx = eval_indices(small_dataset(), cfg.eval_every);
  const auto ea = evaluate(*r.model, small_dataset(), idx), eb = evaluate(*loaded, small_dataset(), idx);
  EXPECT_EQ(ea.top1, eb.top1);
  EXPECT_EQ(ea.radius, eb.radius);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const fs::path dir = scratch("bad_ckpt");
  std::ofstream(dir / "x.ckpt") << "hyperskel-checkpoint 1\n{\"format\":\"nope\"}\n";
  EXPECT_THROW(load_checkpoint((dir / "x.ckpt").string()), std::exception);
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), std::exception);
}

TEST(Export, RadiiMatchRecomputedDistancesAndPcaIsInsideDisk) {
  const fs::path dir = scratch("export");
  TrainConfig cfg = small_config();
  cfg.out_dir = dir.string();
  const auto r = train(cfg, small_dataset());
  const auto idx = eval_indices(small_dataset(), cfg.eval_every);
  const auto res = export_embeddings(*r.model, small_dataset(), idx, (dir / "e.csv").string(),
                                     (dir / "e.svg").string());
  EXPECT_EQ(res.rows, idx.size() * kNumParts);
  EXPECT_TRUE(fs::file_size(dir / "e.svg") > 0);

  const Tensor parts = r.model->encode(make_batch(small_dataset(), idx), false).first;
  const double c = r.model->ball.c();
  const std::size_t d = cfg.d_hyp;
  std::ifstream csv(dir / "e.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("sample_id,label,part,radius,t0,", 0), 0u);
  std::size_t row = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 4 + d + 2);
    const oracle::Vec h(parts.values().begin() + row * d, parts.values().begin() + (row + 1) * d);
    EXPECT_NEAR(std::stod(cells[3]), oracle::dist(oracle::Vec(d, 0.0), h, c), 1e-9);
    EXPECT_EQ(cells[2], kPartNames[row % kNumParts]);
    EXPECT_LT(std::hypot(std::stod(cells[4 + d]), std::stod(cells[5 + d])), 1.0);
    ++row;
  }
  EXPECT_EQ(row, res.rows);
}

TEST(Gradcheck, EveryRegisteredOpPasses) {
  const GradcheckReport r = run_gradcheck({});
  EXPECT_TRUE(r.passed()) << format_report(r);
  EXPECT_LT(r.worst("dist_grad"), 1e-5);
}

TEST(Gradcheck, CorruptedDistGradientIsReported) {
  GradcheckOptions o;
  o.corrupt_dist_grad = true;
  o.filter = "dist_grad";
  const GradcheckReport r = run_gradcheck(o);
  EXPECT_FALSE(r.passed());
  EXPECT_NE(format_report(r).find("FAIL"), std::string::npos);
}

TEST(Gradcheck, ReportCoversTheRegistry) {
  const auto names = registered_ops();
  for (const char* required : {"dist_grad", "mobius_add", "expmap", "logmap", "mobius_matvec",
                               "frechet_mean", "project", "pooled_align", "token_align",
                               "contrastive_loss", "spatial_gcn", "stgcn_block"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), required), names.end()) << required;
  }
  const std::string report = format_report(run_gradcheck({}));
  for (const auto& n : names) EXPECT_NE(report.find(n + " "), std::string::npos) << n;
}

TEST(Ablation, NoiseTableStartsAtZeroDegradation) {
  TrainOptions opts;
  opts.write_files = false;
  const auto hyp = train(small_config(Strategy::kPooled), small_dataset(), opts);
  const auto euc = train(small_config(Strategy::kEuclideanPooled), small_dataset(), opts);
  const auto idx = eval_indices(small_dataset(), 5);
  const auto rows = ablate_noise(*hyp.model, *euc.model, small_dataset(), idx, {0.0, 0.05}, 9);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].hyp_degradation, 0.0);
  EXPECT_EQ(rows[0].euc_degradation, 0.0);
  EXPECT_NE(noise_table(rows).find("0.05"), std::string::npos);
}
