#include "du2/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "du2/errors.hpp"

namespace du2 {

SampleEval score_prediction(const std::string& id, const Tensor& d_pred, const SceneSample& sample,
                            bool affine_fit) {
  if (d_pred.shape() != sample.d_gt.shape()) {
    throw ShapeError("eval: prediction " + shape_str(d_pred.shape()) + " does not match ground truth " +
                     shape_str(sample.d_gt.shape()));
  }
  const Tensor d = affine_fit ? eval_affine_fit(d_pred, sample.d_gt, sample.c_gt) : d_pred;
  SampleEval r;
  r.id = id;
  r.all = eval_metrics(d, sample.d_gt, sample.c_gt);
  r.occluded = eval_metrics(d, sample.d_gt, sample.c_occ);
  return r;
}

std::vector<SampleEval> evaluate_model(const DualNet& net, const std::vector<SceneSample>& samples,
                                       const std::vector<std::string>& ids, bool affine_fit) {
  if (ids.size() != samples.size()) throw UsageError("eval: one id per sample expected");
  std::vector<SampleEval> rows;
  NoGradGuard guard;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ModelOutputs out = net(model_inputs(samples[i]));
    SampleEval r = score_prediction(ids[i], out.d_ref, samples[i], affine_fit);
    r.alpha = out.affine.alpha();
    r.beta = out.affine.beta();
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Metrics mean_metrics(const std::vector<const Metrics*>& ms) {
  Metrics out;
  out.bad.assign(kDefaultThresholds.size(), 0.0);
  std::size_t n = 0;
  for (const Metrics* m : ms) {
    if (!m->defined) continue;
    ++n;
    out.mae += m->mae;
    out.rmse += m->rmse;
    for (std::size_t t = 0; t < out.bad.size(); ++t) out.bad[t] += m->bad[t];
  }
  if (n == 0) {
    out.mae = out.rmse = kNaN;
    for (double& b : out.bad) b = kNaN;
    return out;
  }
  out.defined = true;
  const double k = static_cast<double>(n);
  out.mae /= k;
  out.rmse /= k;
  for (double& b : out.bad) b /= k;
  return out;
}

void append(std::string& line, double v) {
  char buf[40];
  if (std::isnan(v)) {
    line += ",nan";
    return;
  }
  std::snprintf(buf, sizeof buf, ",%.6f", v);
  line += buf;
}

void append_metrics(std::string& line, const Metrics& m) {
  append(line, m.defined ? m.mae : kNaN);
  append(line, m.defined ? m.rmse : kNaN);
  for (std::size_t t = 0; t < kDefaultThresholds.size(); ++t) append(line, m.defined ? m.bad[t] : kNaN);
}

}  // namespace

SampleEval aggregate(const std::vector<SampleEval>& rows) {
  std::vector<const Metrics*> all, occ;
  double alpha = 0, beta = 0;
  for (const auto& r : rows) {
    all.push_back(&r.all);
    occ.push_back(&r.occluded);
    alpha += r.alpha;
    beta += r.beta;
  }
  SampleEval out;
  out.id = "mean";
  out.all = mean_metrics(all);
  out.occluded = mean_metrics(occ);
  const double n = static_cast<double>(rows.size());
  out.alpha = rows.empty() ? kNaN : alpha / n;
  out.beta = rows.empty() ? kNaN : beta / n;
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<SampleEval>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "sample_id,mae,rmse,bad_1.25,bad_2,bad_3,occ_mae,occ_rmse,occ_bad_1.25,occ_bad_2,occ_bad_3,alpha_hat,beta_hat\n";
  auto write = [&](const SampleEval& r) {
    std::string line = r.id;
    append_metrics(line, r.all);
    append_metrics(line, r.occluded);
    append(line, r.alpha);
    append(line, r.beta);
    out << line << "\n";
  };
  for (const auto& r : rows) write(r);
  write(aggregate(rows));
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace du2
