#pragma once

// Per-sample evaluation over all pixels (C_gt) and occluded pixels (C_occ).

#include <filesystem>
#include <string>
#include <vector>

#include "du2/losses.hpp"
#include "du2/model.hpp"
#include "du2/synthgen.hpp"

namespace du2 {

struct SampleEval {
  std::string id;
  Metrics all;
  Metrics occluded;
  double alpha = 0.0;  // fitted DP-to-DC parameters, identity without DP
  double beta = 1.0;
};

/// Scores a full-resolution prediction. With `affine_fit` the prediction is
/// first mapped by the confidence-weighted least-squares affine fit.
SampleEval score_prediction(const std::string& id, const Tensor& d_pred, const SceneSample& sample,
                            bool affine_fit = false);

/// Runs the model on each sample without recording gradients.
std::vector<SampleEval> evaluate_model(const DualNet& net, const std::vector<SceneSample>& samples,
                                       const std::vector<std::string>& ids, bool affine_fit = false);

/// Mean over samples of each metric whose mask was non-empty; NaN otherwise.
SampleEval aggregate(const std::vector<SampleEval>& rows);

/// Header: sample_id,mae,rmse,bad_1.25,bad_2,bad_3,occ_mae,occ_rmse,
/// occ_bad_1.25,occ_bad_2,occ_bad_3,alpha_hat,beta_hat; the last row is "mean".
void write_metrics_csv(const std::filesystem::path& path, const std::vector<SampleEval>& rows);

}  // namespace du2
