#include "du2/config.hpp"

#include <fstream>
#include <sstream>

#include "du2/errors.hpp"
#include "json.hpp"

namespace du2 {

namespace {

using nlohmann::json;

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json to_doc(const RunConfig& c) {
  const SceneConfig& d = c.data;
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  const MvsConfig& v = c.mvs;
  return {
      {"seed", c.seed},
      {"data",
       {{"width", d.width},
        {"height", d.height},
        {"dp_scale", d.dp_scale},
        {"focal", d.focal},
        {"baseline", d.baseline},
        {"z_min", d.z_min},
        {"z_max", d.z_max},
        {"family", to_string(d.family)},
        {"max_occluders", d.max_occluders},
        {"texture", d.texture ? json(to_string(*d.texture)) : json(nullptr)},
        {"integer_disparity", d.integer_disparity},
        {"warp_perturbation", d.warp_perturbation},
        {"dp_max_disparity", d.dp_max_disparity},
        {"alpha_dp", optional_number(d.alpha_dp)},
        {"beta_dp", optional_number(d.beta_dp)},
        {"train", c.n_train},
        {"test", c.n_test}}},
      {"model",
       {{"fusion_mode", std::string(to_string(m.fusion_mode))},
        {"fusion_channels", m.fusion.hidden},
        {"validity_channel", m.fusion.validity_channel},
        {"gamma", m.gamma},
        {"dc_channels", m.dc.channels},
        {"dc_blocks", m.dc.residual_blocks},
        {"dc_temperature", m.dc_temperature},
        {"dp_channels", m.dp.channels},
        {"dp_blocks", m.dp.residual_blocks},
        {"dp_temperature", m.dp.temperature},
        {"fusion_temperature", m.fusion.temperature},
        {"refine_mode", std::string(to_string(m.refine.mode))},
        {"guide_channels", m.refine.guide_channels},
        {"trunk_channels", m.refine.trunk_channels},
        {"refine_blocks", m.refine.residual_blocks},
        {"slope", m.dc.slope}}},
      {"train",
       {{"steps", t.steps},
        {"lr", t.lr},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"adam_eps", t.adam_eps},
        {"checkpoint_every", t.checkpoint_every},
        {"huber_delta", t.huber_delta},
        {"lambda_dp", t.weights.lambda_dp},
        {"lambda_dc", t.weights.lambda_dc},
        {"lambda_unref", t.weights.lambda_unref},
        {"lambda_ref", t.weights.lambda_ref}}},
      {"eval", {{"affine_fit", c.eval_affine_fit}}},
      {"mvs",
       {{"width", v.scene.width},
        {"height", v.scene.height},
        {"focal", v.scene.focal},
        {"baseline", v.scene.baseline},
        {"z_near", v.scene.z_near},
        {"z_far", v.scene.z_far},
        {"occluders", v.scene.occluders},
        {"planes", v.planes},
        {"sigma_spatial", v.bilateral.sigma_spatial},
        {"sigma_range", v.bilateral.sigma_range},
        {"cutoff_px", v.cutoff_px}}},
  };
}

bool compatible(const json& schema, const json& value) {
  if (schema.is_null()) return value.is_null() || value.is_number() || value.is_string();
  if (schema.is_number_unsigned()) return value.is_number_unsigned();
  if (schema.is_number()) return value.is_number();
  return schema.type() == value.type();
}

// Overlays `patch` on `doc`, rejecting keys and types the schema lacks.
void overlay(json& doc, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config: " + (where.empty() ? "document" : where) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!doc.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    json& slot = doc[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
      continue;
    }
    // Optional keys accept null, a number or (for texture) a name.
    const bool optional_key = path == "data.texture" || path == "data.alpha_dp" || path == "data.beta_dp";
    if (optional_key ? !(value.is_null() || value.is_number() || value.is_string()) : !compatible(slot, value)) {
      throw ConfigError("config: key '" + path + "' has the wrong type (" + std::string(value.type_name()) + ")");
    }
    slot = value;
  }
}

std::optional<double> read_optional(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

RunConfig from_doc(const json& doc) {
  RunConfig c;
  try {
    c.seed = doc.at("seed").get<std::uint64_t>();
    const json& d = doc.at("data");
    c.data.width = d.at("width").get<std::size_t>();
    c.data.height = d.at("height").get<std::size_t>();
    c.data.dp_scale = d.at("dp_scale").get<std::size_t>();
    c.data.focal = d.at("focal").get<double>();
    c.data.baseline = d.at("baseline").get<double>();
    c.data.z_min = d.at("z_min").get<double>();
    c.data.z_max = d.at("z_max").get<double>();
    c.data.family = parse_family(d.at("family").get<std::string>());
    c.data.max_occluders = d.at("max_occluders").get<std::size_t>();
    if (!d.at("texture").is_null()) c.data.texture = parse_texture(d.at("texture").get<std::string>());
    c.data.integer_disparity = d.at("integer_disparity").get<bool>();
    c.data.warp_perturbation = d.at("warp_perturbation").get<double>();
    c.data.dp_max_disparity = d.at("dp_max_disparity").get<double>();
    c.data.alpha_dp = read_optional(d.at("alpha_dp"));
    c.data.beta_dp = read_optional(d.at("beta_dp"));
    c.n_train = d.at("train").get<std::size_t>();
    c.n_test = d.at("test").get<std::size_t>();

    const json& m = doc.at("model");
    c.model.fusion_mode = parse_fusion_mode(m.at("fusion_mode").get<std::string>());
    c.model.fusion.hidden = m.at("fusion_channels").get<std::size_t>();
    c.model.fusion.validity_channel = m.at("validity_channel").get<bool>();
    c.model.gamma = m.at("gamma").get<double>();
    c.model.dc.channels = m.at("dc_channels").get<std::size_t>();
    c.model.dc.residual_blocks = m.at("dc_blocks").get<std::size_t>();
    c.model.dc_temperature = m.at("dc_temperature").get<double>();
    c.model.dp.channels = m.at("dp_channels").get<std::size_t>();
    c.model.dp.residual_blocks = m.at("dp_blocks").get<std::size_t>();
    c.model.dp.temperature = m.at("dp_temperature").get<double>();
    c.model.fusion.temperature = m.at("fusion_temperature").get<double>();
    c.model.refine.mode = parse_refine_mode(m.at("refine_mode").get<std::string>());
    c.model.refine.guide_channels = m.at("guide_channels").get<std::size_t>();
    c.model.refine.trunk_channels = m.at("trunk_channels").get<std::size_t>();
    c.model.refine.residual_blocks = m.at("refine_blocks").get<std::size_t>();
    const double slope = m.at("slope").get<double>();
    c.model.dc.slope = c.model.dp.slope = c.model.fusion.slope = c.model.refine.slope = slope;
    c.model.dp_scale = c.data.dp_scale;

    const json& t = doc.at("train");
    c.train.steps = t.at("steps").get<std::size_t>();
    c.train.lr = t.at("lr").get<double>();
    c.train.beta1 = t.at("beta1").get<double>();
    c.train.beta2 = t.at("beta2").get<double>();
    c.train.adam_eps = t.at("adam_eps").get<double>();
    c.train.checkpoint_every = t.at("checkpoint_every").get<std::size_t>();
    c.train.huber_delta = t.at("huber_delta").get<double>();
    c.train.weights.lambda_dp = t.at("lambda_dp").get<double>();
    c.train.weights.lambda_dc = t.at("lambda_dc").get<double>();
    c.train.weights.lambda_unref = t.at("lambda_unref").get<double>();
    c.train.weights.lambda_ref = t.at("lambda_ref").get<double>();

    c.eval_affine_fit = doc.at("eval").at("affine_fit").get<bool>();

    const json& v = doc.at("mvs");
    c.mvs.scene.width = v.at("width").get<std::size_t>();
    c.mvs.scene.height = v.at("height").get<std::size_t>();
    c.mvs.scene.focal = v.at("focal").get<double>();
    c.mvs.scene.baseline = v.at("baseline").get<double>();
    c.mvs.scene.z_near = v.at("z_near").get<double>();
    c.mvs.scene.z_far = v.at("z_far").get<double>();
    c.mvs.scene.occluders = v.at("occluders").get<std::size_t>();
    c.mvs.planes = v.at("planes").get<std::size_t>();
    c.mvs.bilateral.sigma_spatial = v.at("sigma_spatial").get<double>();
    c.mvs.bilateral.sigma_range = v.at("sigma_range").get<double>();
    c.mvs.cutoff_px = v.at("cutoff_px").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.mvs.scene.seed = c.seed;
  c.data.seed = c.seed;

  if (c.train.lr < 0) throw ConfigError("config: train.lr must be nonnegative");
  if (c.model.gamma < 0) throw ConfigError("config: model.gamma must be nonnegative");
  if (c.model.fusion.hidden == 0) throw ConfigError("config: model.fusion_channels must be positive");
  if (c.data.dp_scale == 0 || (c.data.dp_scale & (c.data.dp_scale - 1)) != 0) {
    throw ConfigError("config: data.dp_scale must be a power of two");
  }
  if (!(c.model.dc_temperature > 0) || !(c.model.dp.temperature > 0) || !(c.model.fusion.temperature > 0)) {
    throw ConfigError("config: temperatures must be positive");
  }
  return c;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, RunConfig base) {
  json patch;
  try {
    patch = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  json doc = to_doc(base);
  overlay(doc, patch, "");
  return from_doc(doc);
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_json_text(const RunConfig& config) { return to_doc(config).dump(2) + "\n"; }

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << to_json_text(config);
  if (!out) throw IoError("cannot write config " + path.string());
}

SceneConfig scene_config(const RunConfig& config) {
  SceneConfig s = config.data;
  s.seed = config.seed;
  return s;
}

}  // namespace du2
