#include "starsfm/config.h"

#include <fstream>

namespace starsfm {
namespace {

using nlohmann::json;

const json& Lookup(const json& j, const std::string& section, const std::string& key) {
  const json* node = &j;
  if (!section.empty()) {
    if (!j.contains(section) || !j.at(section).is_object()) throw ConfigError("missing config section: " + section);
    node = &j.at(section);
  }
  if (!node->contains(key)) throw ConfigError("missing config key: " + (section.empty() ? key : section + "." + key));
  return node->at(key);
}

template <typename T>
T Get(const json& j, const std::string& section, const std::string& key) {
  const json& v = Lookup(j, section, key);
  const std::string name = section.empty() ? key : section + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(name + " must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(name + " must be an integer");
    if (std::is_unsigned_v<T> && !v.is_number_unsigned() && v.get<long long>() < 0) {
      throw ConfigError(name + " must be non-negative");
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(name + " must be a number");
  } else {
    if (!v.is_string()) throw ConfigError(name + " must be a string");
  }
  return v.get<T>();
}

void Require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

bool Compatible(const json& base, const json& value) {
  if (base.is_number_float()) return value.is_number();
  if (base.is_number_integer()) return value.is_number_integer();
  return base.type() == value.type();
}

}  // namespace

json ConfigToJson(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["scene"] = {{"trajectory", TrajectoryName(c.scene.trajectory)},
                {"num_cameras", c.scene.num_cameras},
                {"width", c.scene.width},
                {"height", c.scene.height},
                {"focal", c.scene.focal},
                {"shared_camera", c.scene.shared_camera},
                {"feature_spacing", c.scene.feature_spacing},
                {"corridor_spacing", c.scene.corridor_spacing},
                {"bridge", c.scene.bridge},
                {"num_doppelgangers", c.scene.num_doppelgangers}};
  j["noise"] = {{"rotation_deg", c.noise.rotation_deg},
                {"center_fraction", c.noise.center_fraction},
                {"depth_relative", c.noise.depth_relative},
                {"focal_relative", c.noise.focal_relative},
                {"scale_min", c.noise.scale_min},
                {"scale_max", c.noise.scale_max},
                {"outlier_probability", c.noise.outlier_probability},
                {"quantize_tracks", c.noise.quantize_tracks},
                {"track_jitter_px", c.noise.track_jitter_px},
                {"keypoint_px", c.noise.keypoint_px},
                {"max_tracks_per_star", c.noise.max_tracks_per_star}};
  j["candidates"] = {{"window", c.candidates.window}, {"budget", c.candidates.budget}};
  j["view_graph"] = {{"delta0", c.schedule.delta0},
                     {"step", c.schedule.step},
                     {"floor", c.schedule.floor},
                     {"neighbor_cap", c.neighbor_cap}};
  j["overlap"] = {{"tau", c.tau}, {"stride", c.overlap_stride}, {"min_overlap", c.min_overlap}};
  j["rotation_averaging"] = {{"loss", LossKindName(c.rotation.loss.kind)},
                             {"loss_scale", c.rotation.loss.scale},
                             {"max_iterations", c.rotation.max_iterations},
                             {"step_tolerance", c.rotation.step_tolerance}};
  j["similarity_averaging"] = {{"loss", LossKindName(c.similarity.loss)},
                               {"loss_baseline_fraction", c.similarity.loss_baseline_fraction},
                               {"max_iterations", c.similarity.max_iterations},
                               {"cost_tolerance", c.similarity.cost_tolerance},
                               {"variant", c.similarity_variant},
                               {"anchor_scale", c.anchor_scale}};
  j["tracks"] = {{"snap_radius", c.snap_radius},
                 {"pair_budget", c.pair_budget},
                 {"virtual_samples", c.virtual_tracks.samples},
                 {"global_ratio", c.virtual_tracks.global_ratio},
                 {"plane_epsilon", c.virtual_tracks.plane_epsilon},
                 {"classical", c.classical_tracks},
                 {"feedforward", c.feedforward_tracks},
                 {"virtual", c.use_virtual_tracks},
                 {"min_parallax", c.min_parallax}};
  j["bundle_adjustment"] = {{"track_loss", LossKindName(c.ba.track_loss.kind)},
                            {"track_loss_scale", c.ba.track_loss.scale},
                            {"virtual_loss", LossKindName(c.ba.virtual_loss.kind)},
                            {"virtual_loss_scale", c.ba.virtual_loss.scale},
                            {"refine_focals", c.ba.refine_focals},
                            {"max_iterations", c.ba.max_iterations},
                            {"cost_tolerance", c.ba.cost_tolerance},
                            {"gradient_tolerance", c.ba.gradient_tolerance},
                            {"initial_damping", c.ba.initial_damping}};
  j["stages"] = {{"skip_tracking", c.skip_tracking}, {"skip_aba", c.skip_aba}};
  j["output"] = {{"timings", c.timings}};
  return j;
}

PipelineConfig ConfigFromJson(const json& input) {
  Require(input.is_object(), "config must be a JSON object");
  // Missing keys take their defaults; unknown keys are rejected.
  json j = ConfigToJson(PipelineConfig{});
  MergeConfig(&j, input);

  PipelineConfig c;
  c.seed = Get<uint64_t>(j, "", "seed");
  c.threads = Get<int>(j, "", "threads");
  Require(c.threads >= 1, "threads must be at least 1");

  try {
    c.scene.trajectory = ParseTrajectory(Get<std::string>(j, "scene", "trajectory"));
    c.rotation.loss.kind = ParseLossKind(Get<std::string>(j, "rotation_averaging", "loss"));
    c.similarity.loss = ParseLossKind(Get<std::string>(j, "similarity_averaging", "loss"));
    c.ba.track_loss.kind = ParseLossKind(Get<std::string>(j, "bundle_adjustment", "track_loss"));
    c.ba.virtual_loss.kind = ParseLossKind(Get<std::string>(j, "bundle_adjustment", "virtual_loss"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.scene.num_cameras = Get<int>(j, "scene", "num_cameras");
  c.scene.width = Get<int>(j, "scene", "width");
  c.scene.height = Get<int>(j, "scene", "height");
  c.scene.focal = Get<double>(j, "scene", "focal");
  c.scene.shared_camera = Get<bool>(j, "scene", "shared_camera");
  c.scene.feature_spacing = Get<double>(j, "scene", "feature_spacing");
  c.scene.corridor_spacing = Get<double>(j, "scene", "corridor_spacing");
  c.scene.bridge = Get<bool>(j, "scene", "bridge");
  c.scene.num_doppelgangers = Get<int>(j, "scene", "num_doppelgangers");
  c.scene.seed = c.seed;
  Require(c.scene.num_cameras >= 2, "scene.num_cameras must be at least 2");
  Require(c.scene.width > 0 && c.scene.height > 0, "scene image size must be positive");
  Require(c.scene.focal > 0.0, "scene.focal must be positive");
  Require(c.scene.feature_spacing > 0.0, "scene.feature_spacing must be positive");

  c.noise.rotation_deg = Get<double>(j, "noise", "rotation_deg");
  c.noise.center_fraction = Get<double>(j, "noise", "center_fraction");
  c.noise.depth_relative = Get<double>(j, "noise", "depth_relative");
  c.noise.focal_relative = Get<double>(j, "noise", "focal_relative");
  c.noise.scale_min = Get<double>(j, "noise", "scale_min");
  c.noise.scale_max = Get<double>(j, "noise", "scale_max");
  c.noise.outlier_probability = Get<double>(j, "noise", "outlier_probability");
  c.noise.quantize_tracks = Get<bool>(j, "noise", "quantize_tracks");
  c.noise.track_jitter_px = Get<double>(j, "noise", "track_jitter_px");
  c.noise.keypoint_px = Get<double>(j, "noise", "keypoint_px");
  c.noise.max_tracks_per_star = Get<int>(j, "noise", "max_tracks_per_star");
  try {
    c.noise.Validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  c.candidates.window = Get<int>(j, "candidates", "window");
  c.candidates.budget = Get<int>(j, "candidates", "budget");
  Require(c.candidates.window >= 1 && c.candidates.budget >= 0, "candidates.window >= 1 and budget >= 0 required");

  c.schedule.delta0 = Get<double>(j, "view_graph", "delta0");
  c.schedule.step = Get<double>(j, "view_graph", "step");
  c.schedule.floor = Get<double>(j, "view_graph", "floor");
  c.neighbor_cap = Get<int>(j, "view_graph", "neighbor_cap");
  Require(c.schedule.step > 0.0 && c.schedule.floor <= c.schedule.delta0, "invalid threshold schedule");
  Require(c.neighbor_cap >= 1, "view_graph.neighbor_cap must be at least 1");

  c.tau = Get<double>(j, "overlap", "tau");
  c.overlap_stride = Get<int>(j, "overlap", "stride");
  c.min_overlap = Get<double>(j, "overlap", "min_overlap");
  Require(c.tau > 0.0 && c.overlap_stride >= 1, "overlap.tau > 0 and overlap.stride >= 1 required");
  Require(c.min_overlap >= 0.0 && c.min_overlap <= 1.0, "overlap.min_overlap must lie in [0, 1]");

  c.rotation.loss.scale = Get<double>(j, "rotation_averaging", "loss_scale");
  c.rotation.max_iterations = Get<int>(j, "rotation_averaging", "max_iterations");
  c.rotation.step_tolerance = Get<double>(j, "rotation_averaging", "step_tolerance");
  c.rotation.num_threads = c.threads;
  Require(c.rotation.loss.scale > 0.0, "rotation_averaging.loss_scale must be positive");

  c.similarity.loss_baseline_fraction = Get<double>(j, "similarity_averaging", "loss_baseline_fraction");
  c.similarity.max_iterations = Get<int>(j, "similarity_averaging", "max_iterations");
  c.similarity.cost_tolerance = Get<double>(j, "similarity_averaging", "cost_tolerance");
  c.similarity_variant = Get<bool>(j, "similarity_averaging", "variant");
  c.anchor_scale = Get<double>(j, "similarity_averaging", "anchor_scale");
  c.similarity.num_threads = c.threads;
  Require(c.similarity.loss_baseline_fraction > 0.0, "similarity_averaging.loss_baseline_fraction must be positive");
  Require(c.anchor_scale > 0.0, "similarity_averaging.anchor_scale must be positive");

  c.snap_radius = Get<double>(j, "tracks", "snap_radius");
  c.pair_budget = Get<int>(j, "tracks", "pair_budget");
  c.virtual_tracks.samples = Get<int>(j, "tracks", "virtual_samples");
  c.virtual_tracks.global_ratio = Get<double>(j, "tracks", "global_ratio");
  c.virtual_tracks.plane_epsilon = Get<double>(j, "tracks", "plane_epsilon");
  c.classical_tracks = Get<bool>(j, "tracks", "classical");
  c.feedforward_tracks = Get<bool>(j, "tracks", "feedforward");
  c.use_virtual_tracks = Get<bool>(j, "tracks", "virtual");
  c.min_parallax = Get<double>(j, "tracks", "min_parallax");
  Require(c.snap_radius > 0.0, "tracks.snap_radius must be positive");
  Require(c.pair_budget > 0, "tracks.pair_budget must be positive");
  Require(c.virtual_tracks.samples >= 1, "tracks.virtual_samples must be at least 1");
  Require(c.virtual_tracks.global_ratio >= 0.0 && c.virtual_tracks.global_ratio <= 1.0,
          "tracks.global_ratio must lie in [0, 1]");
  Require(c.virtual_tracks.plane_epsilon > 0.0, "tracks.plane_epsilon must be positive");

  c.ba.track_loss.scale = Get<double>(j, "bundle_adjustment", "track_loss_scale");
  c.ba.virtual_loss.scale = Get<double>(j, "bundle_adjustment", "virtual_loss_scale");
  c.ba.refine_focals = Get<bool>(j, "bundle_adjustment", "refine_focals");
  c.ba.max_iterations = Get<int>(j, "bundle_adjustment", "max_iterations");
  c.ba.cost_tolerance = Get<double>(j, "bundle_adjustment", "cost_tolerance");
  c.ba.gradient_tolerance = Get<double>(j, "bundle_adjustment", "gradient_tolerance");
  c.ba.initial_damping = Get<double>(j, "bundle_adjustment", "initial_damping");
  c.ba.plane_epsilon = c.virtual_tracks.plane_epsilon;
  c.ba.num_threads = c.threads;
  Require(c.ba.track_loss.scale > 0.0 && c.ba.virtual_loss.scale > 0.0, "loss scales must be positive");
  Require(c.ba.max_iterations >= 0 && c.ba.initial_damping > 0.0, "invalid bundle adjustment settings");

  c.skip_tracking = Get<bool>(j, "stages", "skip_tracking");
  c.skip_aba = Get<bool>(j, "stages", "skip_aba");
  c.timings = Get<bool>(j, "output", "timings");
  return c;
}

void MergeConfig(json* base, const json& overrides, const std::string& prefix) {
  if (!overrides.is_object()) throw ConfigError("config section " + (prefix.empty() ? "<root>" : prefix) + " must be an object");
  for (const auto& [key, value] : overrides.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (!base->contains(key)) throw ConfigError("unknown config key: " + name);
    json& target = (*base)[key];
    if (target.is_object()) {
      MergeConfig(&target, value, name);
    } else if (!Compatible(target, value)) {
      throw ConfigError("config key " + name + " expects " + std::string(target.type_name()) + ", got " +
                        std::string(value.type_name()));
    } else {
      target = value;
    }
  }
}

void ApplyOverride(json* config, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  // Build the nested override object from the dotted path.
  json overlay = value;
  size_t end = path.size();
  while (true) {
    const size_t dot = path.rfind('.', end - 1);
    const std::string key = path.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    if (key.empty()) throw ConfigError("malformed override key: " + path);
    overlay = json{{key, overlay}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  MergeConfig(config, overlay);
}

PipelineConfig LoadConfig(const std::optional<std::string>& path, const std::vector<std::string>& overrides,
                          std::optional<uint64_t> seed) {
  json config = ConfigToJson(PipelineConfig{});
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file: " + *path);
    json file = json::parse(in, nullptr, false);
    if (file.is_discarded()) throw ConfigError("config file is not valid JSON: " + *path);
    MergeConfig(&config, file);
  }
  for (const std::string& o : overrides) ApplyOverride(&config, o);
  if (seed) config["seed"] = *seed;
  return ConfigFromJson(config);
}

}  // namespace starsfm
