#include "du2/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "du2/errors.hpp"

namespace du2 {

Adam::Adam(const ParameterSet& params, const TrainConfig& config) : params_(params.entries()), config_(config) {
  for (const auto& [_, t] : params_) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].second;
    const auto g = p.grad();
    if (g.empty()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    auto x = p.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      if (config_.lr != 0.0) x[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_eps);
    }
  }
}

NamedTensors Adam::state() const {
  NamedTensors out;
  out.emplace_back("adam.t", Tensor({1}, {static_cast<double>(t_)}));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const Shape& s = params_[k].second.shape();
    out.emplace_back("adam.m." + params_[k].first, Tensor(s, m_[k]));
    out.emplace_back("adam.v." + params_[k].first, Tensor(s, v_[k]));
  }
  return out;
}

void Adam::load_state(const NamedTensors& archive) {
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : archive) {
      if (n == name) return t;
    }
    throw ConfigError("checkpoint has no entry '" + name + "'");
  };
  t_ = static_cast<std::size_t>(find("adam.t").item());
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const Tensor& m = find("adam.m." + params_[k].first);
    const Tensor& v = find("adam.v." + params_[k].first);
    if (m.size() != m_[k].size() || v.size() != v_[k].size()) {
      throw ConfigError("checkpoint moments for '" + params_[k].first + "' have the wrong size");
    }
    std::copy(m.data().begin(), m.data().end(), m_[k].begin());
    std::copy(v.data().begin(), v.data().end(), v_[k].begin());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const Adam* adam) {
  NamedTensors all = params.entries();
  if (adam) {
    auto st = adam->state();
    all.insert(all.end(), st.begin(), st.end());
  }
  // Write then rename so an interrupted run never leaves a torn file.
  const auto tmp = path.string() + ".tmp";
  save_archive(tmp, all);
  std::filesystem::rename(tmp, path);
}

std::size_t load_checkpoint(const std::filesystem::path& path, const ParameterSet& params, Adam* adam) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint " + path.string() + " does not exist");
  const NamedTensors archive = load_archive(path);
  for (const auto& [name, target] : params.entries()) {
    auto it = std::find_if(archive.begin(), archive.end(), [&](const auto& e) { return e.first == name; });
    if (it == archive.end()) throw ConfigError(path.string() + ": missing parameter '" + name + "'");
    if (it->second.shape() != target.shape()) {
      throw ConfigError(path.string() + ": parameter '" + name + "' is " + shape_str(it->second.shape()) +
                        ", model expects " + shape_str(target.shape()));
    }
    Tensor dst = target;
    std::copy(it->second.data().begin(), it->second.data().end(), dst.data().begin());
  }
  std::size_t step = 0;
  for (const auto& [name, t] : archive) {
    if (name == "adam.t") step = static_cast<std::size_t>(t.item());
  }
  if (adam) adam->load_state(archive);
  return step;
}

std::size_t sample_for_step(std::uint64_t seed, std::size_t n, std::size_t step) {
  if (n == 0) throw UsageError("sample_for_step: empty training set");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).fork(1000 + step / n);
  // Fisher-Yates with the project's generator so the order is portable.
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i)));
    std::swap(order[i], order[j]);
  }
  return order[step % n];
}

namespace {

constexpr const char* kLogHeader = "step,sample,total,dp,dc,unref,ref,alpha,beta";

std::string log_line(const StepLog& s) {
  char buf[320];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", s.step, s.sample, s.total, s.dp,
                s.dc, s.unref, s.ref, s.alpha, s.beta);
  return buf;
}

// Keeps the log lines of steps before `keep_below` (used on resume).
std::vector<std::string> read_log_prefix(const std::filesystem::path& path, std::size_t keep_below) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) < keep_below) lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::vector<StepLog> train_model(DualNet& net, const std::vector<SceneSample>& data, const RunConfig& config,
                                 const TrainOptions& options) {
  if (data.empty()) throw UsageError("train: the training set is empty");
  std::filesystem::create_directories(options.out);
  ParameterSet params;
  net.register_parameters(params);
  Adam adam(params, config.train);

  const auto ckpt = options.out / "checkpoint.bin";
  const auto log_path = options.out / "loss.csv";
  std::size_t start = 0;
  std::vector<std::string> kept;
  if (options.resume && std::filesystem::exists(ckpt)) {
    start = load_checkpoint(ckpt, params, &adam);
    kept = read_log_prefix(log_path, start);
  }
  save_run_config(options.out / "config.json", config);
  std::ofstream log(log_path, std::ios::trunc);
  log << kLogHeader << "\n";
  for (const auto& l : kept) log << l << "\n";

  const LossWeights weights = net.effective_weights(config.train.weights);
  std::vector<StepLog> history;
  for (std::size_t step = start; step < config.train.steps; ++step) {
    const std::size_t idx = sample_for_step(config.seed, data.size(), step);
    const SceneSample& s = data[idx];
    StepLog entry;
    entry.step = step;
    entry.sample = idx;
    try {
      params.zero_grad();
      const ModelOutputs out = net(model_inputs(s));
      const LossTerms terms = total_loss(out.loss, out.affine, {s.d_gt, s.c_gt}, weights, config.model.factor,
                                         config.train.huber_delta);
      entry.total = terms.total.item();
      if (!std::isfinite(entry.total)) throw NumericError("loss is not finite");
      backward(terms.total);
      entry.dp = terms.dp;
      entry.dc = terms.dc;
      entry.unref = terms.unref;
      entry.ref = terms.ref;
      entry.alpha = out.affine.alpha();
      entry.beta = out.affine.beta();
    } catch (const NumericError& e) {
      log.flush();
      throw NumericError("train: step " + std::to_string(step) + " (sample " + std::to_string(idx) +
                         ") aborted: " + e.what());
    }
    adam.step();
    history.push_back(entry);
    log << log_line(entry) << "\n";
    const std::size_t done = step + 1;
    if (options.report_every && done % options.report_every == 0) {
      std::fprintf(stderr, "step %zu/%zu loss %.4f\n", done, config.train.steps, entry.total);
    }
    if ((config.train.checkpoint_every && done % config.train.checkpoint_every == 0) ||
        done == config.train.steps) {
      log.flush();
      save_checkpoint(ckpt, params, &adam);
    }
  }
  if (start >= config.train.steps && !std::filesystem::exists(ckpt)) save_checkpoint(ckpt, params, &adam);
  return history;
}

std::vector<SceneSample> load_samples(const std::filesystem::path& dir) {
  std::vector<SceneSample> out;
  for (const auto& p : list_samples(dir)) out.push_back(read_sample(p));
  if (out.empty()) throw IoError("no samples under " + dir.string());
  return out;
}

}  // namespace du2
