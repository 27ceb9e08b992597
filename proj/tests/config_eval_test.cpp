#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "du2/config.hpp"
#include "du2/errors.hpp"
#include "du2/eval.hpp"

using namespace du2;
namespace fs = std::filesystem;

TEST(Config, DefaultsRoundTripThroughJson) {
  RunConfig c;
  c.seed = 42;
  c.model.fusion_mode = FusionMode::dp_dc_cost;
  c.model.refine.mode = RefineMode::dp_image_warp;
  c.data.family = SceneFamily::stripes_band;
  c.data.alpha_dp = -0.5;
  c.train.weights.lambda_dc = 3.0;
  const std::string text = to_json_text(c);
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(to_json_text(back), text);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.model.fusion_mode, FusionMode::dp_dc_cost);
  EXPECT_EQ(back.model.refine.mode, RefineMode::dp_image_warp);
  EXPECT_EQ(back.data.family, SceneFamily::stripes_band);
  ASSERT_TRUE(back.data.alpha_dp.has_value());
  EXPECT_EQ(*back.data.alpha_dp, -0.5);
  EXPECT_FALSE(back.data.beta_dp.has_value());
}

TEST(Config, PartialDocumentOverlaysTheBase) {
  RunConfig base;
  base.train.steps = 77;
  const RunConfig c = parse_run_config(R"({"model": {"gamma": 0.25}, "train": {"lr": 0.002}})", base);
  EXPECT_EQ(c.model.gamma, 0.25);
  EXPECT_EQ(c.train.lr, 0.002);
  EXPECT_EQ(c.train.steps, 77u);
}

TEST(Config, ErrorsNameTheOffendingKey) {
  auto message = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(R"({"model": {"gama": 0.1}})").find("gama"), std::string::npos);
  EXPECT_NE(message(R"({"train": {"steps": "many"}})").find("steps"), std::string::npos);
  EXPECT_NE(message(R"({"model": {"fusion_mode": "late"}})").find("late"), std::string::npos);
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), IoError);
}

TEST(Config, SavedFileLoadsBack) {
  const fs::path p = fs::temp_directory_path() / "du2_config_test.json";
  RunConfig c;
  c.n_train = 5;
  save_run_config(p, c);
  EXPECT_EQ(load_run_config(p).n_train, 5u);
}

namespace {

SceneSample small_scene() {
  SceneConfig c;
  c.seed = 21;
  return generate_scene(c);
}

}  // namespace

TEST(Eval, GroundTruthScoresZero) {
  const SceneSample s = small_scene();
  const SampleEval r = score_prediction("x", s.d_gt, s);
  ASSERT_TRUE(r.all.defined);
  EXPECT_EQ(r.all.mae, 0.0);
  EXPECT_EQ(r.all.rmse, 0.0);
  for (double b : r.all.bad) EXPECT_EQ(b, 0.0);
}

TEST(Eval, AffineFitUndoesAnAffineDistortion) {
  const SceneSample s = small_scene();
  Tensor d = s.d_gt.clone();
  for (double& v : d.data()) v = 0.5 * v - 3.0;
  EXPECT_GT(score_prediction("x", d, s).all.mae, 1.0);
  EXPECT_NEAR(score_prediction("x", d, s, true).all.mae, 0.0, 1e-9);
  EXPECT_THROW(score_prediction("x", Tensor({4, 4}), s), ShapeError);
}

TEST(Eval, AggregateSkipsUndefinedMasks) {
  SampleEval a, b;
  a.all = {true, 1.0, 2.0, {10, 20, 30}};
  b.all = {true, 3.0, 4.0, {30, 40, 50}};
  a.occluded = {true, 5.0, 5.0, {1, 1, 1}};
  b.occluded = {false, 0, 0, {0, 0, 0}};
  const SampleEval m = aggregate({a, b});
  EXPECT_EQ(m.all.mae, 2.0);
  EXPECT_EQ(m.all.bad[1], 30.0);
  EXPECT_EQ(m.occluded.mae, 5.0);
  const SampleEval none = aggregate({b});
  EXPECT_TRUE(std::isnan(none.occluded.mae));
}

TEST(Eval, CsvHasOneRowPerSamplePlusMean) {
  const SceneSample s = small_scene();
  std::vector<SampleEval> rows{score_prediction("000", s.d_gt, s), score_prediction("001", s.d_gt, s)};
  const fs::path p = fs::temp_directory_path() / "du2_eval_test" / "metrics.csv";
  write_metrics_csv(p, rows);
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0],
            "sample_id,mae,rmse,bad_1.25,bad_2,bad_3,occ_mae,occ_rmse,occ_bad_1.25,occ_bad_2,occ_bad_3,alpha_hat,"
            "beta_hat");
  EXPECT_EQ(lines[1].substr(0, 13), "000,0.000000,");
  EXPECT_EQ(lines[3].substr(0, 5), "mean,");
}
