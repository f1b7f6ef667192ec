#pragma once

// Command implementations for the `coherent` tool. Kept in a header so the
// test suite can drive the commands in-process.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "coherent/coherent.hpp"

namespace coherent::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2 };

namespace fs = std::filesystem;

// Every resolved knob; all of them are echoed in every manifest.
struct Settings {
  LossConfig loss;
  FlowParams flow;
  int band = 15;
  RegionSpec::Mode region = RegionSpec::Mode::kGlobal;
  int length = kDefaultSequenceLength;
  std::string severities = "1-6";
  std::uint64_t seed = 0;
  std::string tracking = "flow";
};

inline const char* to_string(DisagreementMode m) {
  return m == DisagreementMode::kTopOneMargin ? "top1" : "abs";
}
inline const char* to_string(RegionSpec::Mode m) {
  return m == RegionSpec::Mode::kGlobal ? "global" : "local";
}

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}
inline std::string percent(double v) { return fixed(v, 2); }
inline std::string loss_value(double v) { return fixed(v, 6); }

// Optional overrides collected from the command line; empty means "not given".
struct Overrides {
  std::optional<int> theta, band, length, levels, radius, iterations;
  std::optional<double> gamma, alpha, beta, fb_epsilon, min_eig;
  std::optional<std::string> dset, region, severities, tracking;
  std::optional<std::uint64_t> seed;
  std::string config_path;

  void add_loss_flags(CLI::App* app) {
    app->add_option("--theta", theta, "boundary band width in pixels (default 15)");
    app->add_option("--gamma", gamma, "confidence threshold (default 0.05)");
    app->add_option("--alpha", alpha, "boundary coherency weight (default 1)");
    app->add_option("--beta", beta, "global coherency weight (default 5e-5)");
    app->add_option("--dset", dset, "disagreement set reading: top1|abs (default top1)")
        ->check(CLI::IsMember({"top1", "abs"}));
  }
  void add_flow_flags(CLI::App* app) {
    app->add_option("--levels", levels, "pyramid levels (default 4)");
    app->add_option("--radius", radius, "window radius in pixels (default 10)");
    app->add_option("--iterations", iterations, "iterations per level (default 10)");
    app->add_option("--min-eig", min_eig, "minimum structure-tensor eigenvalue (default 1e-4)");
    app->add_option("--fb-eps", fb_epsilon, "forward-backward radius in pixels (default 1)");
  }
  void add_config_flag(CLI::App* app) {
    app->add_option("--config", config_path, "key=value defaults file (flags take precedence)");
  }

  // flags > config file > built-in defaults
  Settings resolve() const {
    Settings s;
    KeyValueRecord cfg;
    if (!config_path.empty()) cfg = KeyValueRecord::read(config_path);

    auto pick_int = [&](const std::optional<int>& flag, const char* key, int& out) {
      if (flag) {
        out = *flag;
      } else if (auto v = cfg.get_number(key)) {
        out = static_cast<int>(*v);
      }
    };
    auto pick_double = [&](const std::optional<double>& flag, const char* key, double& out) {
      if (flag) {
        out = *flag;
      } else if (auto v = cfg.get_number(key)) {
        out = *v;
      }
    };
    auto pick_string = [&](const std::optional<std::string>& flag, const char* key) {
      if (flag) return std::optional<std::string>(*flag);
      return cfg.get(key);
    };

    pick_int(theta, "theta", s.loss.theta);
    pick_double(gamma, "gamma", s.loss.gamma);
    pick_double(alpha, "alpha", s.loss.alpha);
    pick_double(beta, "beta", s.loss.beta);
    pick_double(fb_epsilon, "fb_epsilon", s.loss.fb_epsilon);
    if (auto d = pick_string(dset, "dset")) {
      if (*d == "top1") {
        s.loss.disagreement = DisagreementMode::kTopOneMargin;
      } else if (*d == "abs") {
        s.loss.disagreement = DisagreementMode::kAbsoluteDifference;
      } else {
        throw InputError("dset must be top1 or abs, got " + *d);
      }
    }
    pick_int(levels, "flow.pyramid_levels", s.flow.pyramid_levels);
    pick_int(radius, "flow.window_radius", s.flow.window_radius);
    pick_int(iterations, "flow.iterations_per_level", s.flow.iterations_per_level);
    pick_double(min_eig, "flow.min_eigen_threshold", s.flow.min_eigen_threshold);
    pick_int(band, "band", s.band);
    pick_int(length, "length", s.length);
    if (auto r = pick_string(region, "region")) {
      if (*r == "global") {
        s.region = RegionSpec::Mode::kGlobal;
      } else if (*r == "local") {
        s.region = RegionSpec::Mode::kLocal;
      } else {
        throw InputError("region must be global or local, got " + *r);
      }
    }
    if (auto v = pick_string(severities, "severities")) s.severities = *v;
    if (auto v = pick_string(tracking, "tracking")) s.tracking = *v;
    if (seed) {
      s.seed = *seed;
    } else if (auto v = cfg.get("seed")) {
      s.seed = std::stoull(*v);
    }

    try {
      s.loss.validate();
      s.flow.validate();
    } catch (const InvariantError& e) {
      throw InputError(e.what());
    }
    if (s.band < 1) throw InputError("band must be >= 1");
    if (s.length < 1) throw InputError("length must be >= 1");
    if (s.tracking != "flow" && s.tracking != "all") {
      throw InputError("tracking must be flow or all, got " + s.tracking);
    }
    return s;
  }
};

inline KeyValueRecord manifest_for(const std::string& command, const Settings& s,
                                   const std::vector<std::pair<std::string, std::string>>& inputs) {
  KeyValueRecord m;
  m.set("tool", "coherent");
  m.set("version", kVersion);
  m.set("command", command);
  m.set("theta", std::to_string(s.loss.theta));
  m.set_number("gamma", s.loss.gamma);
  m.set_number("alpha", s.loss.alpha);
  m.set_number("beta", s.loss.beta);
  m.set_number("fb_epsilon", s.loss.fb_epsilon);
  m.set("dset", to_string(s.loss.disagreement));
  m.set("flow.pyramid_levels", std::to_string(s.flow.pyramid_levels));
  m.set("flow.window_radius", std::to_string(s.flow.window_radius));
  m.set("flow.iterations_per_level", std::to_string(s.flow.iterations_per_level));
  m.set_number("flow.min_eigen_threshold", s.flow.min_eigen_threshold);
  m.set("region", to_string(s.region));
  m.set("band", std::to_string(s.band));
  m.set("length", std::to_string(s.length));
  m.set("severities", s.severities);
  m.set("seed", std::to_string(s.seed));
  m.set("tracking", s.tracking);
  for (const auto& [k, v] : inputs) m.set("input." + k, v);
  return m;
}

// "1-6", "3", "1,3,5" or "2-4,6".
inline std::vector<int> parse_severities(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto dash = part.find('-');
    try {
      const int lo = std::stoi(part.substr(0, dash));
      const int hi = dash == std::string::npos ? lo : std::stoi(part.substr(dash + 1));
      for (int s = lo; s <= hi; ++s) {
        if (s < kMinSeverity || s > kMaxSeverity) throw InputError("severity outside [1,6]: " + text);
        out.insert(s);
      }
    } catch (const std::logic_error&) {
      throw InputError("bad severity list: " + text);
    }
  }
  if (out.empty()) throw InputError("empty severity list");
  return {out.begin(), out.end()};
}

// ---- synth --------------------------------------------------------------------

struct SynthArgs {
  std::string image, label, out, manifest;
};

inline int cmd_synth(const SynthArgs& a, const Overrides& o, std::ostream& out) {
  const Settings s = o.resolve();
  const auto severities = parse_severities(s.severities);
  const Image image = read_image_png(a.image);
  const LabelMap label = read_label_png(a.label);
  if (image.height() != label.height() || image.width() != label.width()) {
    throw DimensionError("image and label dimensions differ");
  }
  std::size_t frames = 0;
  for (int sev : severities) {
    const auto seq = generate_sequence(image, label, sev, s.length, suite_seed(s.seed, sev));
    KeyValueRecord extra;
    extra.set("suite_seed", std::to_string(s.seed));
    write_sequence(fs::path(a.out) / ("severity_" + std::to_string(sev)), seq, extra);
    frames += seq.frames.size();
  }
  auto manifest = manifest_for("synth", s, {{"image", a.image}, {"label", a.label}});
  manifest.set("sequences", std::to_string(severities.size()));
  manifest.set("frames", std::to_string(frames));
  manifest.write(a.manifest.empty() ? fs::path(a.out) / "manifest.txt" : fs::path(a.manifest));
  out << "wrote " << severities.size() << " sequences, " << frames << " frames to " << a.out
      << "\n";
  return kOk;
}

// ---- flow ---------------------------------------------------------------------

struct FlowArgs {
  std::string prev, next, out_fwd, out_bwd, out_corr, manifest;
};

inline int cmd_flow(const FlowArgs& a, const Overrides& o, std::ostream& out) {
  const Settings s = o.resolve();
  const Image prev = read_image_png(a.prev);
  const Image next = read_image_png(a.next);
  const auto match = match_frames(prev, next, s.flow, s.loss.fb_epsilon);
  write_flo(a.out_fwd, match.prev_to_next);
  write_flo(a.out_bwd, match.next_to_prev);
  const fs::path corr(a.out_corr);
  write_mask_png(corr / "tracked.png", match.at_prev.tracked());
  write_mask_png(corr / "dual_matched.png", match.at_prev.dual_matched());
  auto manifest = manifest_for("flow", s, {{"prev", a.prev}, {"next", a.next}});
  manifest.set("tracked", std::to_string(match.at_prev.tracked().count()));
  manifest.set("dual_matched", std::to_string(match.at_prev.dual_matched().count()));
  manifest.write(a.manifest.empty() ? corr / "manifest.txt" : fs::path(a.manifest));
  out << "tracked " << match.at_prev.tracked().count() << " dual_matched "
      << match.at_prev.dual_matched().count() << " of " << prev.height() * prev.width() << "\n";
  return kOk;
}

// ---- predictions on disk -----------------------------------------------------

struct PredictionSet {
  std::vector<LabelMap> labels;
  std::vector<SoftmaxMap<float>> scores;  // filled only when every file is SFM1
  int classes = 0;
};

inline PredictionSet read_predictions(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".sfm" || ext == ".png")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  PredictionSet p;
  bool all_sfm = !files.empty();
  for (const auto& f : files) all_sfm = all_sfm && f.extension() == ".sfm";
  for (const auto& f : files) {
    if (f.extension() == ".sfm") {
      auto m = read_sfm(f);
      p.classes = std::max(p.classes, m.classes());
      p.labels.push_back(argmax_labels(m));
      if (all_sfm) p.scores.push_back(std::move(m));
    } else {
      p.labels.push_back(read_label_png(f));
      p.classes = std::max(p.classes, static_cast<int>(p.labels.back().max_label()) + 1);
    }
  }
  return p;
}

// ---- stb ----------------------------------------------------------------------

struct StbArgs {
  std::string seq_dir, pred_dir, report, manifest;
};

inline int cmd_stb(const StbArgs& a, const Overrides& o, std::ostream& out) {
  const Settings s = o.resolve();
  const StoredSequence seq = read_sequence(a.seq_dir);
  const PredictionSet preds = read_predictions(a.pred_dir);
  if (preds.labels.size() != seq.labels.size()) {
    throw InputError("prediction count " + std::to_string(preds.labels.size()) +
                     " does not match sequence length " + std::to_string(seq.labels.size()));
  }
  std::vector<CorrespondenceSet> tracked;
  if (s.tracking == "flow") {
    for (std::size_t t = 1; t < seq.images.size(); ++t) {
      // Estimated correspondences on frame t's grid, pointing into t-1.
      const auto back = compute_flow(seq.images[t], seq.images[t - 1], s.flow);
      const auto fwd = compute_flow(seq.images[t - 1], seq.images[t], s.flow);
      tracked.push_back(forward_backward_check(back, fwd, s.loss.fb_epsilon));
    }
  }
  const RegionSpec region{s.region, s.band};
  const auto report = stb(std::span<const LabelMap>(preds.labels), seq.flows, seq.occlusions,
                          tracked, region, seq.labels);

  const std::string key = std::string("stb_") + to_string(s.region);
  KeyValueRecord metrics;
  const fs::path report_path =
      a.report.empty() ? fs::path(a.pred_dir) / "metrics.txt" : fs::path(a.report);
  if (fs::exists(report_path)) metrics = KeyValueRecord::read(report_path);
  metrics.set(key, percent(report.stb));
  for (std::size_t k = 0; k < report.pairs.size(); ++k) {
    char name[64];
    std::snprintf(name, sizeof name, "%s.pair_%03zu", key.c_str(), k + 1);
    const auto& p = report.pairs[k];
    metrics.set(name, p.skipped() ? "skipped" : std::to_string(p.agreed) + "/" +
                                                    std::to_string(p.evaluated));
  }
  const int classes =
      std::max(preds.classes, static_cast<int>(std::max_element(seq.labels.begin(), seq.labels.end(),
                                                                [](const auto& x, const auto& y) {
                                                                  return x.max_label() < y.max_label();
                                                                })->max_label()) + 1);
  metrics.set("miou_syn", percent(miou(preds.labels, seq.labels, classes)));
  if (!preds.scores.empty() && preds.scores.front().classes() == 2 && classes <= 2) {
    metrics.set("mae_syn", percent(mae(std::span<const SoftmaxMap<float>>(preds.scores), seq.labels)));
  }
  metrics.write(report_path);

  auto manifest = manifest_for("stb", s, {{"seq_dir", a.seq_dir}, {"pred_dir", a.pred_dir}});
  manifest.write(a.manifest.empty() ? fs::path(report_path.string() + ".manifest.txt")
                                    : fs::path(a.manifest));
  out << "STB " << percent(report.stb) << "\n";
  if (report.has_skipped_pairs()) out << "warning: pairs with empty evaluation sets were skipped\n";
  return kOk;
}

// ---- eval (per-frame accuracy) --------------------------------------------------

struct EvalArgs {
  std::string pred_dir, gt_dir, report, manifest, split = "test";
  int classes = 0;
};

inline int cmd_eval(const EvalArgs& a, const Overrides& o, std::ostream& out) {
  const Settings s = o.resolve();
  const PredictionSet preds = read_predictions(a.pred_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.gt_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<LabelMap> gts;
  for (const auto& f : files) gts.push_back(read_label_png(f));
  if (gts.size() != preds.labels.size()) throw InputError("prediction/label count mismatch");
  int classes = a.classes;
  if (classes == 0) {
    classes = preds.classes;
    for (const auto& g : gts) classes = std::max(classes, static_cast<int>(g.max_label()) + 1);
  }
  KeyValueRecord metrics;
  if (fs::exists(a.report)) metrics = KeyValueRecord::read(a.report);
  const double m = miou(preds.labels, gts, classes);
  metrics.set("miou_" + a.split, percent(m));
  out << "mIoU " << percent(m) << "\n";
  if (!preds.scores.empty() && preds.scores.front().classes() == 2) {
    const double e = mae(std::span<const SoftmaxMap<float>>(preds.scores), gts);
    metrics.set("mae_" + a.split, percent(e));
    out << "MAE " << percent(e) << "\n";
  }
  metrics.write(a.report);
  auto manifest = manifest_for("eval", s, {{"pred_dir", a.pred_dir}, {"gt_dir", a.gt_dir}});
  manifest.set("split", a.split);
  manifest.set("classes", std::to_string(classes));
  manifest.write(a.manifest.empty() ? fs::path(a.report + ".manifest.txt") : fs::path(a.manifest));
  return kOk;
}

// ---- loss ---------------------------------------------------------------------

struct LossArgs {
  std::string m_prev, m_next, pred, gt, flow_fwd, flow_bwd, img_prev, img_next, grad_out, manifest;
};

inline int cmd_loss(const LossArgs& a, const Overrides& o, std::ostream& out) {
  const Settings s = o.resolve();
  const bool have_pair = !a.m_prev.empty() || !a.m_next.empty();
  const bool have_labeled = !a.pred.empty() || !a.gt.empty();
  if (have_pair && (a.m_prev.empty() || a.m_next.empty())) {
    throw InputError("--m-prev and --m-next must be given together");
  }
  if (have_labeled && (a.pred.empty() || a.gt.empty())) {
    throw InputError("--pred and --gt must be given together");
  }
  if (!have_pair && !have_labeled) throw InputError("nothing to evaluate: give a pair and/or --pred/--gt");
  if (a.flow_fwd.empty() != a.flow_bwd.empty()) {
    throw InputError("--flow-fwd and --flow-bwd must be given together");
  }

  std::optional<SoftmaxMap<double>> prev, next, pred;
  std::optional<LabelMap> gt;
  std::optional<FramePairMatch> match;
  std::string flow_source = "none";
  if (have_pair) {
    prev = read_sfm(a.m_prev).cast<double>();
    next = read_sfm(a.m_next).cast<double>();
    if (!a.flow_fwd.empty()) {
      match = FramePairMatch::from_flows(read_flo(a.flow_fwd), read_flo(a.flow_bwd),
                                         s.loss.fb_epsilon);
      flow_source = "files";
    } else if (!a.img_prev.empty() && !a.img_next.empty()) {
      match = match_frames(read_image_png(a.img_prev), read_image_png(a.img_next), s.flow,
                           s.loss.fb_epsilon);
      flow_source = "estimated";
    } else {
      match = FramePairMatch::from_flows(FlowField::zeros(prev->height(), prev->width()),
                                         FlowField::zeros(prev->height(), prev->width()),
                                         s.loss.fb_epsilon);
      flow_source = "zero";
    }
  }
  if (have_labeled) {
    pred = read_sfm(a.pred).cast<double>();
    gt = read_label_png(a.gt);
  }

  std::optional<LabeledInput<double>> labeled_in;
  if (pred) labeled_in = LabeledInput<double>{&*pred, &*gt};
  std::optional<PairInput<double>> pair_in;
  if (prev) pair_in = PairInput<double>{&*prev, &*next, &*match};
  const auto r = total_loss(labeled_in, pair_in, s.loss);

  KeyValueRecord values;
  values.set("l_seg", loss_value(r.l_seg));
  values.set("l_bc", loss_value(r.l_bc));
  values.set("l_gc", loss_value(r.l_gc));
  values.set("l_all", loss_value(r.l_all));
  values.set("active.seg", std::to_string(r.active.seg));
  values.set("active.bc_forward", std::to_string(r.active.bc_forward));
  values.set("active.bc_backward", std::to_string(r.active.bc_backward));
  values.set("active.gc_forward", std::to_string(r.active.gc_forward));
  values.set("active.gc_backward", std::to_string(r.active.gc_backward));
  if (pair_in) {
    values.set("bc_empty", r.bc_empty ? "1" : "0");
    values.set("gc_empty", r.gc_empty ? "1" : "0");
  }
  for (const char* k : {"l_seg", "l_bc", "l_gc", "l_all"}) out << k << " " << *values.get(k) << "\n";

  auto manifest = manifest_for("loss", s,
                               {{"m_prev", a.m_prev}, {"m_next", a.m_next}, {"pred", a.pred},
                                {"gt", a.gt}, {"flow_fwd", a.flow_fwd}, {"flow_bwd", a.flow_bwd},
                                {"img_prev", a.img_prev}, {"img_next", a.img_next}});
  manifest.set("flow_source", flow_source);
  if (!a.grad_out.empty()) {
    const fs::path dir(a.grad_out);
    if (r.grad_prev) write_score_tensor(dir / "grad_prev.sfm", r.grad_prev->cast<float>());
    if (r.grad_next) write_score_tensor(dir / "grad_next.sfm", r.grad_next->cast<float>());
    if (r.grad_labeled) write_score_tensor(dir / "grad_pred.sfm", r.grad_labeled->cast<float>());
    values.write(dir / "loss.txt");
  }
  if (!a.manifest.empty()) {
    manifest.write(a.manifest);
  } else if (!a.grad_out.empty()) {
    manifest.write(fs::path(a.grad_out) / "manifest.txt");
  } else {
    out << "# manifest\n" << manifest.to_string();
  }
  return kOk;
}

// ---- report -------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> inputs;  // NAME=PATH
  std::string out, manifest;
};

// The table goes to stdout byte-exactly, so the manifest only accompanies a file output.
inline int cmd_report(const ReportArgs& a, const Overrides& o, std::ostream& out) {
  if (a.inputs.empty()) throw InputError("report: no inputs given");
  struct Row {
    std::string name;
    KeyValueRecord values;
  };
  std::vector<Row> rows;
  std::set<std::string> names;
  for (const auto& spec : a.inputs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw InputError("report: expected NAME=PATH, got " + spec);
    std::string name = spec.substr(0, eq);
    if (!names.insert(name).second) throw InputError("report: duplicate method name " + name);
    rows.push_back({std::move(name), KeyValueRecord::read(spec.substr(eq + 1))});
  }

  static const std::vector<std::pair<std::string, std::string>> kColumns = {
      {"miou_test", "mIoU(test)"}, {"miou_syn", "mIoU(syn)"}, {"stb_global", "STB_global"},
      {"stb_local", "STB_local"},  {"mae", "MAE"}};
  std::vector<std::pair<std::string, std::string>> columns;
  for (const auto& c : kColumns) {
    if (std::any_of(rows.begin(), rows.end(), [&](const Row& r) { return r.values.get(c.first); })) {
      columns.push_back(c);
    }
  }

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Method"};
  for (const auto& c : columns) header.push_back(c.second);
  cells.push_back(header);
  for (const auto& r : rows) {
    std::vector<std::string> line{r.name};
    for (const auto& c : columns) {
      const auto v = r.values.get_number(c.first);
      line.push_back(v ? percent(*v) : "-");
    }
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::ostringstream table;
  auto emit = [&](const std::vector<std::string>& line) {
    table << "|";
    for (std::size_t i = 0; i < line.size(); ++i) {
      table << " " << line[i] << std::string(width[i] - line[i].size(), ' ') << " |";
    }
    table << "\n";
  };
  emit(cells[0]);
  table << "|";
  for (std::size_t w : width) table << std::string(w + 2, '-') << "|";
  table << "\n";
  for (std::size_t i = 1; i < cells.size(); ++i) emit(cells[i]);

  out << table.str();
  if (!a.out.empty()) atomic_write(a.out, table.str());
  if (!a.out.empty() || !a.manifest.empty()) {
    std::vector<std::pair<std::string, std::string>> inputs;
    for (const auto& spec : a.inputs) {
      const auto eq = spec.find('=');
      inputs.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
    }
    auto manifest = manifest_for("report", o.resolve(), inputs);
    manifest.write(a.manifest.empty() ? fs::path(a.out + ".manifest.txt") : fs::path(a.manifest));
  }
  return kOk;
}

// ---- entry point ----------------------------------------------------------------

inline int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal coherency toolkit for video segmentation", "coherent"};
  app.set_version_flag("--version", std::string("coherent ") + kVersion);
  app.require_subcommand(1);

  Overrides ov;

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate perturbation sequences from a labeled image");
  c_synth->add_option("--image", synth.image, "source image (PNG)")->required();
  c_synth->add_option("--label", synth.label, "source label map (PNG)")->required();
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--seed", ov.seed, "RNG seed (default 0)");
  c_synth->add_option("--length", ov.length, "frames per sequence (default 11)");
  c_synth->add_option("--severities", ov.severities, "severity list, e.g. 1-6 or 2,4 (default 1-6)");
  c_synth->add_option("--manifest", synth.manifest, "manifest path (default OUT/manifest.txt)");
  ov.add_config_flag(c_synth);

  FlowArgs flow;
  auto* c_flow = app.add_subcommand("flow", "estimate forward/backward flow and correspondences");
  c_flow->add_option("--prev", flow.prev, "previous frame (PNG)")->required();
  c_flow->add_option("--next", flow.next, "next frame (PNG)")->required();
  c_flow->add_option("--out-fwd", flow.out_fwd, "forward flow output (.flo)")->required();
  c_flow->add_option("--out-bwd", flow.out_bwd, "backward flow output (.flo)")->required();
  c_flow->add_option("--out-corr", flow.out_corr, "directory for correspondence masks")->required();
  c_flow->add_option("--manifest", flow.manifest, "manifest path (default OUT_CORR/manifest.txt)");
  ov.add_flow_flags(c_flow);
  ov.add_config_flag(c_flow);

  StbArgs stbargs;
  auto* c_stb = app.add_subcommand("stb", "stability rate of predictions on a synthetic sequence");
  c_stb->add_option("--seq-dir", stbargs.seq_dir, "sequence directory written by synth")->required();
  c_stb->add_option("--pred-dir", stbargs.pred_dir, "one SFM1 or label PNG per frame")->required();
  c_stb->add_option("--region", ov.region, "global|local (default global)")
      ->check(CLI::IsMember({"global", "local"}));
  c_stb->add_option("--band", ov.band, "local band width in pixels (default 15)");
  c_stb->add_option("--tracking", ov.tracking,
                    "flow: restrict to flow-tracked pixels; all: every pixel (default flow)")
      ->check(CLI::IsMember({"flow", "all"}));
  c_stb->add_option("--report", stbargs.report, "metrics report (default PRED_DIR/metrics.txt)");
  c_stb->add_option("--manifest", stbargs.manifest, "manifest path (default REPORT.manifest.txt)");
  ov.add_flow_flags(c_stb);
  ov.add_config_flag(c_stb);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "per-frame mIoU (and MAE for binary SFM1 predictions)");
  c_eval->add_option("--pred-dir", eval.pred_dir, "one SFM1 or label PNG per frame")->required();
  c_eval->add_option("--gt-dir", eval.gt_dir, "one label PNG per frame")->required();
  c_eval->add_option("--report", eval.report, "metrics report to create or update")->required();
  c_eval->add_option("--split", eval.split, "key suffix, e.g. test or syn (default test)");
  c_eval->add_option("--classes", eval.classes, "class count (default: inferred)");
  c_eval->add_option("--manifest", eval.manifest, "manifest path (default REPORT.manifest.txt)");
  ov.add_config_flag(c_eval);

  LossArgs loss;
  auto* c_loss = app.add_subcommand("loss", "evaluate L_seg, L_bc, L_gc, L_all and their gradients");
  c_loss->add_option("--m-prev", loss.m_prev, "softmax map of frame t-1 (SFM1)");
  c_loss->add_option("--m-next", loss.m_next, "softmax map of frame t (SFM1)");
  c_loss->add_option("--pred", loss.pred, "softmax map of a labeled frame (SFM1)");
  c_loss->add_option("--gt", loss.gt, "label map of the labeled frame (PNG)");
  c_loss->add_option("--flow-fwd", loss.flow_fwd, "flow t-1 -> t on frame t-1's grid (.flo)");
  c_loss->add_option("--flow-bwd", loss.flow_bwd, "flow t -> t-1 on frame t's grid (.flo)");
  c_loss->add_option("--img-prev", loss.img_prev, "frame t-1 image; flow is estimated when given");
  c_loss->add_option("--img-next", loss.img_next, "frame t image");
  c_loss->add_option("--grad-out", loss.grad_out, "directory for gradient SFM1 files");
  c_loss->add_option("--manifest", loss.manifest, "manifest path");
  c_loss->add_option("--fb-eps", ov.fb_epsilon, "forward-backward radius in pixels (default 1)");
  ov.add_loss_flags(c_loss);
  ov.add_config_flag(c_loss);

  ReportArgs rep;
  auto* c_report = app.add_subcommand("report", "render metric reports as a table");
  c_report->add_option("inputs", rep.inputs, "NAME=PATH of a metrics report");
  c_report->add_option("--out", rep.out, "also write the table to this file");
  c_report->add_option("--manifest", rep.manifest, "manifest path (default OUT.manifest.txt)");
  ov.add_config_flag(c_report);

  std::vector<std::string> reversed(argv.rbegin(), argv.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth, ov, out);
    if (c_flow->parsed()) return cmd_flow(flow, ov, out);
    if (c_stb->parsed()) return cmd_stb(stbargs, ov, out);
    if (c_eval->parsed()) return cmd_eval(eval, ov, out);
    if (c_loss->parsed()) return cmd_loss(loss, ov, out);
    if (c_report->parsed()) return cmd_report(rep, ov, out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace coherent::cli
