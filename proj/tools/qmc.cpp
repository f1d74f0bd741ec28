// qmc: simulate, reconstruct and analyze biphoton coincidence-imaging runs.

#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "qmc/config.hpp"
#include "qmc/error.hpp"
#include "qmc/io.hpp"
#include "qmc/metrics.hpp"
#include "qmc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace qmc;

namespace {

constexpr int kUsageExit = 2;
constexpr int kInternalExit = 1;

std::string exit_code_table() {
  std::string s = "Exit codes:\n  0   success\n  1   internal error\n  2   usage error\n";
  for (ErrorCode c : {ErrorCode::config, ErrorCode::invalid_parameter, ErrorCode::shape_mismatch,
                      ErrorCode::truncation, ErrorCode::format, ErrorCode::io, ErrorCode::no_signal,
                      ErrorCode::insufficient_data, ErrorCode::degenerate_image,
                      ErrorCode::undefined_cnr, ErrorCode::fit_failed,
                      ErrorCode::placement_infeasible}) {
    s += fmt::format("  {:<3} {}\n", exit_code(c), to_string(c));
  }
  s += "Failures print one line to stderr:\n  error: code=<name> exit=<n> message=\"...\"\n";
  s += "Log verbosity: QMC_LOG=trace|debug|info|warn|error|off (default warn).";
  return s;
}

void report(std::string_view code, int exit, const std::string& message) {
  std::string escaped;
  for (char c : message) {
    if (c == '"' || c == '\\') escaped += '\\';
    escaped += c == '\n' ? ' ' : c;
  }
  std::cerr << "error: code=" << code << " exit=" << exit << " message=\"" << escaped << "\"\n";
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

double parse_number(const std::string& what, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::invalid_parameter, what + ": '" + s + "' is not a number");
}

std::uint64_t parse_count(const std::string& what, const std::string& s) {
  const double v = parse_number(what, s);
  require(v >= 0.0 && v == std::floor(v), ErrorCode::invalid_parameter,
          what + ": '" + s + "' is not a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

std::vector<std::uint64_t> parse_counts(const std::string& what, const std::string& list) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split(list, ',')) out.push_back(parse_count(what, item));
  require(!out.empty(), ErrorCode::invalid_parameter, what + " is empty");
  return out;
}

Vec2 parse_center(const std::string& s) {
  const auto parts = split(s, ',');
  require(parts.size() == 2, ErrorCode::invalid_parameter, "--center expects auto or cx,cy");
  return {parse_number("--center", parts[0]), parse_number("--center", parts[1])};
}

// "key=value;key=value"
std::map<std::string, std::string> parse_params(const std::string& s) {
  std::map<std::string, std::string> out;
  for (const auto& item : split(s, ';')) {
    const auto eq = item.find('=');
    require(eq != std::string::npos, ErrorCode::invalid_parameter,
            "--params entries must look like key=value, got '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

Roi parse_roi(const std::string& s, RoiRole role) {
  const auto p = split(s, ',');
  require(p.size() == 4, ErrorCode::invalid_parameter, "ROI must be x,y,w,h, got '" + s + "'");
  auto i = [](const std::string& v) { return static_cast<int>(parse_number("ROI", v)); };
  return {i(p[0]), i(p[1]), i(p[2]), i(p[3]), role};
}

Image load_image(const fs::path& path) {
  if (path.extension() == ".qci") return read_qci(path);
  if (path.extension() == ".pgm") {
    const PgmImage pgm = read_pgm(path);
    Image img(pgm.pixels.width(), pgm.pixels.height());
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = pgm.pixels[i];
    return img;
  }
  fail(ErrorCode::format, "'" + path.string() + "': expected a .qci or .pgm image");
}

// "-" is stdout.
std::unique_ptr<MetricsCsv> open_csv(const std::string& out) {
  if (out == "-") return std::make_unique<MetricsCsv>(std::cout);
  return std::make_unique<MetricsCsv>(fs::path(out));
}

void write_image(const fs::path& dir, const std::string& name, const Image& img) {
  write_qci(dir / (name + ".qci"), img);
  write_pgm_normalized(dir / (name + ".pgm"), img);
}

struct Globals {
  int workers = 1;
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const Globals& g, const std::string& config, const std::string& output,
                 const std::string& frames) {
  RunConfig cfg = load_config(config);
  if (!output.empty()) cfg.output_dir = output;
  if (!frames.empty()) cfg.n_frames = parse_count("--frames", frames);
  const std::optional<std::uint64_t> seed = g.seed ? g.seed : cfg.seed;
  require(seed.has_value(), ErrorCode::config, "simulate needs a seed (--seed or run.seed)");
  cfg.validate();
  const SimulationSummary s = run_simulation(cfg, *seed, g.workers);
  std::cout << s.qfs.string() << '\n' << s.ledger_csv.string() << '\n';
  return 0;
}

int cmd_reconstruct(const std::string& input, const std::string& estimator,
                    const std::string& center, const std::string& config, const std::string& output,
                    std::optional<double> offset, std::optional<double> slope) {
  ReconstructOptions opt;
  if (!config.empty()) opt = reconstruct_options(load_config(config));
  const EstimatorChoice choice = parse_estimator_choice(estimator);
  opt.shifted = choice != EstimatorChoice::covariance;
  if (center != "auto") opt.center = parse_center(center);
  if (offset) opt.offset = *offset;
  if (slope) opt.slope = *slope;

  const Reconstruction rec = reconstruct_qfs(input, opt);
  const fs::path dir = output;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create '" + dir.string() + "': " + ec.message());
  if (choice != EstimatorChoice::shifted) write_image(dir, "covariance", rec.covariance.values);
  if (rec.shifted) write_image(dir, "shifted", rec.shifted->values);
  write_image(dir, "classical", rec.classical.values);

  MetricsCsv csv(dir / "registration.csv");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  csv.row("center_x", rec.registration.center.x, nan, rec.n_frames);
  csv.row("center_y", rec.registration.center.y, nan, rec.n_frames);
  csv.row("center_confidence", rec.center_confidence, nan, rec.n_frames);
  std::cout << dir.string() << '\n';
  return 0;
}

int analyze_cnr(const Image& img, const std::map<std::string, std::string>& p, MetricsCsv& csv,
                std::uint64_t default_seed) {
  auto get = [&](const std::string& k, const std::string& d) {
    const auto it = p.find(k);
    return it == p.end() ? d : it->second;
  };
  require(p.count("roi1") && p.count("roi2"), ErrorCode::invalid_parameter,
          "cnr needs roi1=x,y,w,h and roi2=x,y,w,h");
  CnrTemplate tmpl{parse_roi(p.at("roi1"), RoiRole::object), parse_roi(p.at("roi2"), RoiRole::background)};
  CnrOptions opt;
  opt.n_placements = static_cast<int>(parse_count("n", get("n", "10")));
  opt.jitter = static_cast<int>(parse_count("jitter", get("jitter", "2")));
  const std::uint64_t seed = parse_count("seed", get("seed", std::to_string(default_seed)));
  Engine rng = make_stream(seed, kCnrStream);
  const CnrResult r = cnr_protocol(img, tmpl, opt, rng);
  const std::string params = fmt::format("jitter={};seed={}", opt.jitter, seed);
  csv.row("cnr", r.cnr, std::numeric_limits<double>::quiet_NaN(), 1, params);
  csv.row("cnr_protocol", r.mean, r.sem, r.n_placements, params);
  return 0;
}

int analyze_esf(const Image& img, const std::map<std::string, std::string>& p, MetricsCsv& csv) {
  auto get = [&](const std::string& k, const std::string& d) {
    const auto it = p.find(k);
    return it == p.end() ? d : it->second;
  };
  const std::string axis = get("axis", "x");
  require(axis == "x" || axis == "y", ErrorCode::invalid_parameter, "axis must be x or y");
  const double pitch = parse_number("pitch", get("pitch", "1"));
  const bool along_x = axis == "x";
  const int n = along_x ? img.width() : img.height();
  const int m = along_x ? img.height() : img.width();
  std::vector<double> profile(n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) profile[i] += along_x ? img(i, j) : img(j, i);
    profile[i] /= m;
  }
  const EsfFit fit = fit_esf(profile);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::string params = fmt::format("axis={};pitch={};converged={}", axis, pitch, int{fit.converged});
  csv.row("esf_w_px", fit.w, nan, profile.size(), params);
  csv.row("esf_x0_px", fit.x0, nan, profile.size(), params);
  csv.row("esf_r_squared", fit.r_squared, nan, profile.size(), params);
  csv.row("fwhm_um", fit.w > 0.0 ? fwhm_resolution(fit.w) * pitch : nan, nan, profile.size(), params);
  return fit.converged ? 0 : exit_code(ErrorCode::fit_failed);
}

int analyze_mcw(const fs::path& path, const std::map<std::string, std::string>& p, MetricsCsv& csv) {
  auto get = [&](const std::string& k, const std::string& d) {
    const auto it = p.find(k);
    return it == p.end() ? d : it->second;
  };
  require(path.extension() == ".qfs", ErrorCode::format, "mcw reads a .qfs frame stack");
  const double pitch = parse_number("pitch", get("pitch", "1"));
  const auto half = static_cast<int>(parse_count("half_window", get("half_window", "12")));
  const auto frames = parse_count("frames", get("frames", "10000"));
  QfsReader reader(path);
  require(reader.header().split(), ErrorCode::format, "stack does not hold split L|R frames");
  std::vector<Frame> stack;
  Frame f;
  while (stack.size() < frames && reader.read(f)) stack.push_back(f);
  const int w = static_cast<int>(reader.header().width / 2);
  const int h = static_cast<int>(reader.header().height);
  CenterSearch search;
  search.min_frames = std::min<std::size_t>(search.min_frames, stack.size());
  const CenterEstimate c = find_center(stack, w, h, search);
  const SumLandscape land = sum_landscape(stack, w, h, c.registration.k, half);
  const MomentumWidth m = momentum_corr_width(land, pitch);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::string params = fmt::format("pitch={};frames={}", pitch, stack.size());
  csv.row("sum_sigma_x_um", m.sigma_x_um, nan, stack.size(), params);
  csv.row("sum_sigma_y_um", m.sigma_y_um, nan, stack.size(), params);
  csv.row("sum_fwhm_x_um", m.fwhm_x_um, nan, stack.size(), params);
  csv.row("sum_fwhm_y_um", m.fwhm_y_um, nan, stack.size(), params);
  return 0;
}

int cmd_analyze(const Globals& g, const std::string& image, const std::string& task,
                const std::string& params, const std::string& output) {
  const auto p = parse_params(params);
  if (task == "mcw") return analyze_mcw(image, p, *open_csv(output));
  const Image img = load_image(image);
  if (task == "cnr") return analyze_cnr(img, p, *open_csv(output), g.seed.value_or(1));
  return analyze_esf(img, p, *open_csv(output));
}

int cmd_sweep_frames(const Globals& g, const std::string& config, const std::string& frames,
                     const std::string& seeds, const std::string& output) {
  const RunConfig cfg = load_config(config);
  const auto points = parse_counts("--frames", frames);
  std::vector<std::uint64_t> seed_list =
      seeds.empty() ? std::vector<std::uint64_t>{g.seed.value_or(cfg.seed.value_or(1))}
                    : parse_counts("--seeds", seeds);
  const auto rows = sweep_frames(cfg, points, seed_list, g.workers);
  write_sweep_csv(*open_csv(output), rows);
  return 0;
}

int cmd_sweep_stray(const Globals& g, const std::string& config, const std::string& stray,
                    const std::string& seeds, const std::string& output) {
  const RunConfig cfg = load_config(config);
  std::vector<double> levels;
  for (const auto& s : split(stray, ',')) levels.push_back(parse_number("--stray", s));
  require(!levels.empty(), ErrorCode::invalid_parameter, "--stray is empty");
  std::vector<std::uint64_t> seed_list =
      seeds.empty() ? std::vector<std::uint64_t>{g.seed.value_or(cfg.seed.value_or(1))}
                    : parse_counts("--seeds", seeds);
  const auto rows = sweep_stray(cfg, levels, seed_list, g.workers);
  write_sweep_csv(*open_csv(output), rows);
  return 0;
}

int cmd_import_fits(const std::string& input, const std::string& output) {
  FitsReader reader(input);
  require(reader.width() % 2 == 0, ErrorCode::format, "FITS frames need an even width to split L|R");
  require(reader.n_frames() <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::format,
          "too many frames for QFS");
  QfsWriter writer(output, static_cast<std::uint32_t>(reader.width()),
                   static_cast<std::uint32_t>(reader.height()),
                   static_cast<std::uint32_t>(reader.n_frames()));
  Frame f;
  while (reader.read(f)) writer.write(f);
  writer.close();
  std::cout << output << '\n';
  return 0;
}

int cmd_export_fits(const std::string& input, const std::string& output) {
  QfsReader reader(input);
  const QfsHeader& h = reader.header();
  require(h.n_frames >= 1, ErrorCode::format, "QFS stack is empty");
  FitsWriter writer(output, static_cast<int>(h.width), static_cast<int>(h.height), h.n_frames);
  Frame f;
  while (reader.read(f)) writer.write(f);
  writer.close();
  std::cout << output << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Biphoton coincidence-imaging simulator and reconstruction toolkit", "qmc"};
  app.footer(exit_code_table());
  app.require_subcommand(1);

  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--workers", g.workers, "Worker threads (output is identical for any count)")
      ->check(CLI::Range(1, 1024));
  auto* seed_opt = app.add_option("--seed", seed_value, "Run seed (overrides run.seed)");

  std::string config, output, frames, input, estimator = "both", center = "auto", image, task,
                                              params, seeds, stray;
  std::optional<double> offset, slope;

  auto* sim = app.add_subcommand("simulate", "Simulate a frame stack (QFS) and its pair ledger");
  sim->add_option("--config", config, "Run config (INI)")->required();
  sim->add_option("--output", output, "Output directory (overrides run.output_dir)");
  sim->add_option("--frames", frames, "Frame count (overrides run.n_frames)");

  auto* rec = app.add_subcommand("reconstruct", "Coincidence and classical images from a QFS stack");
  rec->add_option("--input", input, "QFS stack")->required();
  rec->add_option("--estimator", estimator, "covariance, shifted or both")
      ->check(CLI::IsMember({"covariance", "shifted", "both"}));
  rec->add_option("--center", center, "auto or cx,cy (full-frame pixels)");
  rec->add_option("--config", config, "Take detector offset, slope and centre from a run config");
  rec->add_option("--offset", offset, "Detector background offset, counts");
  rec->add_option("--slope", slope, "Photons per count");
  rec->add_option("--output", output, "Output directory")->default_val("recon");

  auto* ana = app.add_subcommand("analyze", "Metrics on an image (cnr, esf) or stack (mcw)");
  ana->add_option("--image", image, ".qci/.pgm image, or .qfs stack for mcw")->required();
  ana->add_option("--task", task, "cnr, esf or mcw")->required()->check(CLI::IsMember({"cnr", "esf", "mcw"}));
  ana->add_option("--params", params,
                  "key=value;... cnr: roi1,roi2 (x,y,w,h), n, jitter, seed. esf: axis, pitch. "
                  "mcw: pitch, half_window, frames");
  ana->add_option("--output", output, "CSV path or - for stdout")->default_val("-");

  auto* swf = app.add_subcommand("sweep-frames", "CNR against frame count");
  swf->add_option("--config", config, "Run config (INI)")->required();
  swf->add_option("--frames", frames, "Comma-separated frame counts, e.g. 1e4,5e4,2e5")->required();
  swf->add_option("--seeds", seeds, "Comma-separated seeds");
  swf->add_option("--output", output, "CSV path or - for stdout")->default_val("-");

  auto* sws = app.add_subcommand("sweep-stray", "CNR against stray-light level");
  sws->add_option("--config", config, "Run config (INI)")->required();
  sws->add_option("--stray", stray, "Comma-separated multiples of the mean signal")->required();
  sws->add_option("--seeds", seeds, "Comma-separated seeds");
  sws->add_option("--output", output, "CSV path or - for stdout")->default_val("-");

  auto* imp = app.add_subcommand("import-fits", "Convert a 16-bit FITS stack to QFS");
  imp->add_option("--input", input, "FITS file")->required();
  imp->add_option("--output", output, "QFS file")->required();

  auto* exp = app.add_subcommand("export-fits", "Convert a QFS stack to 16-bit FITS");
  exp->add_option("--input", input, "QFS file")->required();
  exp->add_option("--output", output, "FITS file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report("usage", kUsageExit, e.what());
    return kUsageExit;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    if (*sim) return cmd_simulate(g, config, output, frames);
    if (*rec) return cmd_reconstruct(input, estimator, center, config, output, offset, slope);
    if (*ana) return cmd_analyze(g, image, task, params, output);
    if (*swf) return cmd_sweep_frames(g, config, frames, seeds, output);
    if (*sws) return cmd_sweep_stray(g, config, stray, seeds, output);
    if (*imp) return cmd_import_fits(input, output);
    if (*exp) return cmd_export_fits(input, output);
  } catch (const Error& e) {
    report(to_string(e.code()), exit_code(e.code()), e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    report("internal", kInternalExit, e.what());
    return kInternalExit;
  }
  return kInternalExit;
}
