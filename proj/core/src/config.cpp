#include "qmc/config.hpp"

#include <charconv>
#include <fstream>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "qmc/error.hpp"

namespace qmc {

namespace pt = boost::property_tree;

EstimatorChoice parse_estimator_choice(const std::string& name) {
  if (name == "covariance") return EstimatorChoice::covariance;
  if (name == "shifted") return EstimatorChoice::shifted;
  if (name == "both") return EstimatorChoice::both;
  fail(ErrorCode::config, "estimator must be covariance, shifted or both, got '" + name + "'");
}

namespace {

std::string trimmed(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& raw) {
  const std::string s = trimmed(raw);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
    fail(ErrorCode::config, key + ": '" + raw + "' is not a number");
  }
  return v;
}

// Accepts "200000" as well as "2e5".
std::uint64_t to_u64(const std::string& key, const std::string& raw) {
  const std::string s = trimmed(raw);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc{} && ptr == s.data() + s.size()) return v;
  const double d = to_double(key, raw);
  if (d < 0.0 || d != std::floor(d) || d > 1.8e19) {
    fail(ErrorCode::config, key + ": '" + raw + "' is not a non-negative integer");
  }
  return static_cast<std::uint64_t>(d);
}

int to_int(const std::string& key, const std::string& raw) {
  const double d = to_double(key, raw);
  if (d != std::floor(d) || std::abs(d) > 2e9) {
    fail(ErrorCode::config, key + ": '" + raw + "' is not an integer");
  }
  return static_cast<int>(d);
}

Vec2 to_vec2(const std::string& key, const std::string& raw) {
  const auto comma = raw.find(',');
  if (comma == std::string::npos) fail(ErrorCode::config, key + ": expected 'x,y', got '" + raw + "'");
  return {to_double(key, raw.substr(0, comma)), to_double(key, raw.substr(comma + 1))};
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto dbl = [&t](const std::string& k, double RunConfig::*field) {
      t[k] = [field](RunConfig& c, const std::string& key, const std::string& v) { c.*field = to_double(key, v); };
    };
    auto d = [&t](const std::string& k, auto getter) {
      t[k] = [getter](RunConfig& c, const std::string& key, const std::string& v) { getter(c) = to_double(key, v); };
    };
    auto i = [&t](const std::string& k, auto getter) {
      t[k] = [getter](RunConfig& c, const std::string& key, const std::string& v) { getter(c) = to_int(key, v); };
    };

    t["run.n_frames"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.n_frames = to_u64(k, v); };
    t["run.seed"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); };
    t["run.output_dir"] = [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = trimmed(v); };
    t["run.estimator"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.estimator = parse_estimator_choice(trimmed(v));
    };
    t["run.workers"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.workers = to_int(k, v); };
    t["run.ledger_record_frames"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.record_frames = to_u64(k, v);
    };

    t["scene.kind"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.scene.kind = parse_scene_kind(trimmed(v));
    };
    i("scene.width", [](RunConfig& c) -> int& { return c.scene.width; });
    i("scene.height", [](RunConfig& c) -> int& { return c.scene.height; });
    d("scene.pitch_um", [](RunConfig& c) -> double& { return c.scene.pitch_um; });
    d("scene.feature_t", [](RunConfig& c) -> double& { return c.scene.feature_t; });
    d("scene.background_t", [](RunConfig& c) -> double& { return c.scene.background_t; });
    d("scene.edge_x_um", [](RunConfig& c) -> double& { return c.scene.edge_x_um; });
    d("scene.bar_width_um", [](RunConfig& c) -> double& { return c.scene.bar_width_um; });
    i("scene.bar_count", [](RunConfig& c) -> int& { return c.scene.bar_count; });
    d("scene.bar_length_um", [](RunConfig& c) -> double& { return c.scene.bar_length_um; });
    i("scene.fiber_count", [](RunConfig& c) -> int& { return c.scene.fiber_count; });
    d("scene.fiber_diameter_um", [](RunConfig& c) -> double& { return c.scene.fiber_diameter_um; });
    t["scene.seed"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.seed = to_u64(k, v); };
    t["scene.import_path"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.scene.import_path = trimmed(v);
    };

    d("optics.wavelength_um", [](RunConfig& c) -> double& { return c.optics.wavelength_um; });
    d("optics.numerical_aperture", [](RunConfig& c) -> double& { return c.optics.numerical_aperture; });
    d("optics.magnification", [](RunConfig& c) -> double& { return c.optics.magnification; });
    d("optics.pixel_pitch_um", [](RunConfig& c) -> double& { return c.optics.pixel_pitch_um; });
    d("optics.psf_width_multiplier", [](RunConfig& c) -> double& { return c.optics.psf_width_multiplier; });

    d("spdc.pair_rate", [](RunConfig& c) -> double& { return c.spdc.pair_rate; });
    d("spdc.split_sigma_x_um", [](RunConfig& c) -> double& { return c.spdc.split_sigma_um.x; });
    d("spdc.split_sigma_y_um", [](RunConfig& c) -> double& { return c.spdc.split_sigma_um.y; });
    d("spdc.center_x", [](RunConfig& c) -> double& { return c.spdc.center.x; });
    d("spdc.center_y", [](RunConfig& c) -> double& { return c.spdc.center.y; });

    i("detector.width", [](RunConfig& c) -> int& { return c.detector.width; });
    i("detector.height", [](RunConfig& c) -> int& { return c.detector.height; });
    i("detector.binning", [](RunConfig& c) -> int& { return c.detector.binning; });
    d("detector.background_offset", [](RunConfig& c) -> double& { return c.detector.background_offset; });
    d("detector.photons_per_count_slope",
      [](RunConfig& c) -> double& { return c.detector.photons_per_count_slope; });
    d("detector.em_gain_mean", [](RunConfig& c) -> double& { return c.detector.em_gain_mean; });
    d("detector.read_noise_sigma", [](RunConfig& c) -> double& { return c.detector.read_noise_sigma; });
    d("detector.quantum_efficiency", [](RunConfig& c) -> double& { return c.detector.quantum_efficiency; });
    i("detector.saturation", [](RunConfig& c) -> int& { return c.detector.saturation; });

    dbl("stray.mean_intensity", &RunConfig::stray_mean);
    dbl("stray.multiplier", &RunConfig::stray_multiplier);
    dbl("stray.corr_length", &RunConfig::stray_corr_length);

    i("analysis.roi_width", [](RunConfig& c) -> int& { return c.analysis.roi_width; });
    i("analysis.roi_height", [](RunConfig& c) -> int& { return c.analysis.roi_height; });
    i("analysis.jitter", [](RunConfig& c) -> int& { return c.analysis.jitter; });
    i("analysis.n_placements", [](RunConfig& c) -> int& { return c.analysis.n_placements; });
    i("analysis.guard_px", [](RunConfig& c) -> int& { return c.analysis.guard_px; });
    t["analysis.center"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      const std::string s = trimmed(v);
      if (s == "auto") {
        c.analysis.center.reset();
      } else {
        c.analysis.center = to_vec2(k, s);
      }
    };
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  require(n_frames >= 1, ErrorCode::config, "n_frames must be ≥ 1");
  require(workers >= 1, ErrorCode::config, "workers must be >= 1");
  require(stray_mean >= 0.0 && stray_multiplier >= 0.0, ErrorCode::config,
          "stray light levels must be >= 0");
  require(stray_mean == 0.0 || stray_multiplier == 0.0, ErrorCode::config,
          "set either stray.mean_intensity or stray.multiplier, not both");
  require(stray_corr_length >= 1.0, ErrorCode::config, "stray.corr_length must be >= 1 pixel");
  require(analysis.n_placements >= 1 && analysis.jitter >= 0 && analysis.guard_px >= 0,
          ErrorCode::config, "analysis settings must be non-negative with at least 1 placement");
  try {
    optics.validate();
    spdc.validate();
    detector.validate();
  } catch (const Error& e) {
    fail(ErrorCode::config, e.what());
  }
}

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorCode::config, std::string("malformed config: ") + e.message() + " (line " +
                                std::to_string(e.line()) + ")");
  }
  RunConfig cfg;
  const auto& table = setters();
  for (const auto& [section, body] : tree) {
    if (body.empty()) fail(ErrorCode::config, "key '" + section + "' must sit inside a section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = table.find(full);
      if (it == table.end()) fail(ErrorCode::config, "unknown config key '" + full + "'");
      try {
        it->second(cfg, full, value.data());
      } catch (const Error& e) {
        if (e.code() == ErrorCode::config) throw;
        fail(ErrorCode::config, full + ": " + e.what());
      }
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

double resolved_stray_mean(const RunConfig& cfg, const ObjectMask& mask) {
  if (cfg.stray_multiplier > 0.0) {
    return cfg.stray_multiplier * mean_signal_per_pixel(mask, cfg.spdc, cfg.detector);
  }
  return cfg.stray_mean;
}

SimulationSetup make_setup(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SimulationSetup s;
  s.mask = make_test_scene(cfg.scene);
  s.optics = cfg.optics;
  s.spdc = cfg.spdc;
  s.detector = cfg.detector;
  s.stray = make_stray_light(resolved_stray_mean(cfg, s.mask), cfg.stray_corr_length,
                             cfg.detector, seed);
  s.seed = seed;
  s.record_frames = cfg.record_frames;
  return s;
}

int scene_oversample(const RunConfig& cfg) {
  const double ratio = cfg.optics.pixel_pitch_um / cfg.scene.pitch_um;
  const double r = std::round(ratio);
  require(r >= 1.0 && std::abs(ratio - r) < 1e-9, ErrorCode::config,
          "optics.pixel_pitch_um must be an integer multiple of scene.pitch_um");
  return static_cast<int>(r);
}

LabelImage detector_labels(const RunConfig& cfg, const ObjectMask& mask) {
  const int o = scene_oversample(cfg);
  LabelImage labels = scene_labels(mask, o, cfg.scene.feature_t, cfg.analysis.guard_px);
  require(labels.width() == cfg.detector.width && labels.height() == cfg.detector.height,
          ErrorCode::config,
          "scene covers " + std::to_string(labels.width()) + "x" + std::to_string(labels.height()) +
              " detector pixels, detector region is " + std::to_string(cfg.detector.width) + "x" +
              std::to_string(cfg.detector.height));
  return labels;
}

}  // namespace qmc
