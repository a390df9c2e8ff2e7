// SPDX-License-Identifier: Apache-2.0
#include "stenosis/data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include "stenosis/errors.hpp"

namespace stenosis::data {

std::string to_string(Interval i) {
  switch (i) {
    case Interval::no_contrast: return "no_contrast";
    case Interval::introducing: return "introducing";
    case Interval::optimal: return "optimal";
    case Interval::vanishing: return "vanishing";
  }
  return "optimal";
}

std::string to_string(View v) {
  switch (v) {
    case View::RCA: return "RCA";
    case View::LCA: return "LCA";
    case View::other: return "other";
  }
  return "other";
}

Interval interval_from_string(const std::string& s) {
  if (s == "no_contrast") return Interval::no_contrast;
  if (s == "introducing") return Interval::introducing;
  if (s == "optimal") return Interval::optimal;
  if (s == "vanishing") return Interval::vanishing;
  throw ValidationError("unknown interval label '" + s + "'");
}

View view_from_string(const std::string& s) {
  if (s == "RCA") return View::RCA;
  if (s == "LCA") return View::LCA;
  if (s == "other") return View::other;
  throw ValidationError("unknown view label '" + s + "'");
}

std::size_t SequenceManifest::reference_index() const {
  for (const auto& f : frames) {
    if (f.is_reference) return f.index;
  }
  throw ValidationError("sequence " + sequence_id + " has no reference frame");
}

void SequenceManifest::validate() const {
  if (sequence_id.empty()) throw ValidationError("manifest: empty sequence id");
  if (width == 0 || height == 0) throw ValidationError("manifest " + sequence_id + ": empty frame size");
  if (frames.empty()) throw ValidationError("manifest " + sequence_id + ": no frames");
  std::size_t refs = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].index != i) {
      throw ValidationError("manifest " + sequence_id + ": frame indices must be contiguous from 0");
    }
    refs += frames[i].is_reference ? 1 : 0;
  }
  if (refs != 1) {
    throw ValidationError("manifest " + sequence_id + ": expected exactly one reference frame, found " +
                          std::to_string(refs));
  }
}

// --- synthesis -------------------------------------------------------------

namespace {

using Point = std::pair<double, double>;

Point catmull_rom(const Point& p0, const Point& p1, const Point& p2, const Point& p3, double t) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  auto f = [&](double a, double b, double c, double d) {
    return 0.5 * ((2.0 * b) + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 +
                  (-a + 3.0 * b - 3.0 * c + d) * t3);
  };
  return {f(p0.first, p1.first, p2.first, p3.first), f(p0.second, p1.second, p2.second, p3.second)};
}

/// Dense polyline through the control points, resampled at ~0.5 px arclength.
std::vector<Point> spline(const std::vector<Point>& ctrl) {
  std::vector<Point> dense;
  const std::size_t n = ctrl.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Point& p0 = ctrl[i == 0 ? 0 : i - 1];
    const Point& p3 = ctrl[std::min(i + 2, n - 1)];
    for (int s = 0; s < 64; ++s) dense.push_back(catmull_rom(p0, ctrl[i], ctrl[i + 1], p3, s / 64.0));
  }
  dense.push_back(ctrl.back());

  std::vector<Point> out{dense.front()};
  double walked = 0.0;
  double next = 0.5;
  for (std::size_t i = 1; i < dense.size(); ++i) {
    const double dx = dense[i].first - dense[i - 1].first;
    const double dy = dense[i].second - dense[i - 1].second;
    const double seg = std::hypot(dx, dy);
    while (seg > 0.0 && next <= walked + seg) {
      const double t = (next - walked) / seg;
      out.emplace_back(dense[i - 1].first + t * dx, dense[i - 1].second + t * dy);
      next += 0.5;
    }
    walked += seg;
  }
  return out;
}

struct Vessel {
  std::vector<Point> path;
  std::vector<double> width;  // local full width per sample
};

// FWHM -> gaussian sigma
constexpr double kFwhmToSigma = 1.0 / 2.354820045;

void render_vessel(ImageF& dark, const Vessel& v, double nominal, double amplitude, double dx,
                   double dy) {
  const auto w = static_cast<long>(dark.width);
  const auto h = static_cast<long>(dark.height);
  for (std::size_t k = 0; k < v.path.size(); ++k) {
    const double sigma = v.width[k] * kFwhmToSigma;
    const double amp = amplitude * v.width[k] / nominal;
    const double px = v.path[k].first + dx;
    const double py = v.path[k].second + dy;
    const double r = 3.0 * sigma + 1.0;
    const long x0 = std::max(0L, static_cast<long>(std::floor(px - r)));
    const long x1 = std::min(w - 1, static_cast<long>(std::ceil(px + r)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(py - r)));
    const long y1 = std::min(h - 1, static_cast<long>(std::ceil(py + r)));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (long y = y0; y <= y1; ++y) {
      for (long x = x0; x <= x1; ++x) {
        const double ddx = static_cast<double>(x) + 0.5 - px;
        const double ddy = static_cast<double>(y) + 0.5 - py;
        const double val = amp * std::exp(-(ddx * ddx + ddy * ddy) * inv);
        double& d = dark.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
        d = std::max(d, val);
      }
    }
  }
}

void check_params(const SynthParams& p) {
  if (p.width < 16 || p.height < 16) throw ValidationError("synth: frames must be at least 16x16");
  if (!(p.vessel_width > 0.0)) throw ValidationError("synth: vessel width must be positive");
  if (!(p.narrowing > 0.0 && p.narrowing < 1.0)) throw ValidationError("synth: narrowing must lie in (0,1)");
  if (p.phases.optimal < 1) throw ValidationError("synth: need at least one optimal frame");
  if (p.control_points < 2) throw ValidationError("synth: need at least two control points");
  if (!p.stenosis_positions.empty() && p.stenosis_positions.size() != p.stenosis_count) {
    throw ValidationError("synth: stenosis positions must match stenosis count");
  }
  for (double s : p.stenosis_positions) {
    if (!(s > 0.0 && s < 1.0)) throw ValidationError("synth: stenosis positions must lie in (0,1)");
  }
  if (!(p.noise >= 0.0) || !(p.motion_period > 0.0)) throw ValidationError("synth: bad noise or motion period");
  const double margin = 2.0 * p.vessel_width + 2.0;
  if (2.0 * margin >= static_cast<double>(std::min(p.width, p.height))) {
    throw ValidationError("synth: vessel too wide for the frame");
  }
}

}  // namespace

SynthSequence synth_sequence(const SynthParams& p) {
  check_params(p);
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double W = static_cast<double>(p.width);
  const double H = static_cast<double>(p.height);
  const double margin = 2.0 * p.vessel_width + 2.0;
  const double span_x = W - 2.0 * margin;
  const double span_y = H - 2.0 * margin;

  // Main vessel: RCA sweeps across the frame as a gentle C; LCA runs as a
  // diagonal trunk with a side branch.
  std::vector<Point> ctrl;
  const std::size_t n_ctrl = p.control_points;
  const bool diagonal = p.view == View::LCA;
  for (std::size_t i = 0; i < n_ctrl; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n_ctrl - 1);
    const double jitter = (unit(rng) - 0.5) * 0.35;
    if (diagonal) {
      const double along = t;
      const double across = 0.5 + jitter * 0.8;
      ctrl.emplace_back(margin + span_x * std::clamp(along * 0.85 + across * 0.15 - 0.05, 0.0, 1.0),
                        margin + span_y * std::clamp(along * 0.8 + (1.0 - across) * 0.2, 0.0, 1.0));
    } else {
      const double bow = 0.25 * std::sin(std::numbers::pi * t);
      ctrl.emplace_back(margin + span_x * t,
                        margin + span_y * std::clamp(0.5 - bow + jitter, 0.0, 1.0));
    }
  }
  Vessel main;
  main.path = spline(ctrl);
  const double length = 0.5 * static_cast<double>(main.path.size() - 1);

  std::vector<double> positions = p.stenosis_positions;
  if (positions.empty()) {
    for (std::size_t s = 0; s < p.stenosis_count; ++s) {
      double pos = 0.5;
      for (int attempt = 0; attempt < 100; ++attempt) {
        pos = 0.2 + 0.6 * unit(rng);
        const bool far = std::all_of(positions.begin(), positions.end(),
                                     [&](double q) { return std::abs(q - pos) > 0.15; });
        if (far) break;
      }
      positions.push_back(pos);
    }
  }

  const double bump = p.vessel_width;  // lesion half-length scale along the vessel
  main.width.assign(main.path.size(), p.vessel_width);
  for (std::size_t k = 0; k < main.path.size(); ++k) {
    const double s = 0.5 * static_cast<double>(k);
    double factor = 1.0;
    for (double pos : positions) {
      const double d = s - pos * length;
      factor *= 1.0 - (1.0 - p.narrowing) * std::exp(-d * d / (2.0 * bump * bump));
    }
    main.width[k] = p.vessel_width * factor;
  }

  Vessel branch;
  if (diagonal) {
    const std::size_t root = main.path.size() / 3;
    const Point start = main.path[root];
    const double ex = margin + span_x * (0.75 + 0.2 * unit(rng));
    const double ey = margin + span_y * (0.05 + 0.2 * unit(rng));
    const Point mid{0.5 * (start.first + ex) + (unit(rng) - 0.5) * 0.1 * span_x,
                    0.5 * (start.second + ey) + (unit(rng) - 0.5) * 0.1 * span_y};
    branch.path = spline({start, mid, {ex, ey}});
    branch.width.assign(branch.path.size(), 0.7 * p.vessel_width);
  }

  // Static low-frequency background shading.
  const double fx = (0.5 + unit(rng)) * 2.0 * std::numbers::pi / W;
  const double fy = (0.5 + unit(rng)) * 2.0 * std::numbers::pi / H;
  const double phx = unit(rng) * 2.0 * std::numbers::pi;
  const double phy = unit(rng) * 2.0 * std::numbers::pi;

  SynthSequence out;
  out.centerline = main.path;
  const double side = 4.0 * p.vessel_width;
  for (double pos : positions) {
    const auto k = std::min(main.path.size() - 1, static_cast<std::size_t>(std::lround(2.0 * pos * length)));
    out.lesion_boxes_at_rest.emplace_back(main.path[k].first, main.path[k].second, side, side);
  }

  SequenceManifest& m = out.manifest;
  m.sequence_id = p.sequence_id;
  m.patient_id = p.patient_id;
  m.view = p.view;
  m.width = p.width;
  m.height = p.height;
  m.provenance = {"synthetic", p.seed};

  const auto& ph = p.phases;
  const std::size_t total = ph.total();
  const std::size_t ref = ph.no_contrast + ph.introducing + ph.optimal / 2;
  for (std::size_t t = 0; t < total; ++t) {
    FrameRecord rec;
    rec.index = t;
    double opacity = 0.0;
    if (t < ph.no_contrast) {
      rec.interval = Interval::no_contrast;
    } else if (t < ph.no_contrast + ph.introducing) {
      rec.interval = Interval::introducing;
      const auto i = static_cast<double>(t - ph.no_contrast);
      opacity = (i + 1.0) / (static_cast<double>(ph.introducing) + 1.0);
    } else if (t < ph.no_contrast + ph.introducing + ph.optimal) {
      rec.interval = Interval::optimal;
      opacity = 1.0;
    } else {
      rec.interval = Interval::vanishing;
      const auto i = static_cast<double>(t - ph.no_contrast - ph.introducing - ph.optimal);
      opacity = 1.0 - (i + 1.0) / (static_cast<double>(ph.vanishing) + 1.0);
    }
    rec.is_reference = t == ref;

    const double tt = static_cast<double>(t);
    const double phase = 2.0 * std::numbers::pi * tt / p.motion_period;
    const double dx = p.drift_x * tt + p.motion_amplitude * std::sin(phase);
    const double dy = p.drift_y * tt + 0.5 * p.motion_amplitude * std::sin(phase + 0.7);
    out.frame_dx.push_back(dx);
    out.frame_dy.push_back(dy);

    ImageF dark(p.width, p.height, 0.0);
    if (opacity > 0.0) {
      render_vessel(dark, main, p.vessel_width, p.contrast_depth * opacity, dx, dy);
      if (!branch.path.empty()) {
        render_vessel(dark, branch, 0.7 * p.vessel_width, 0.8 * p.contrast_depth * opacity, dx, dy);
      }
      for (const auto& b : out.lesion_boxes_at_rest) {
        try {
          rec.boxes.push_back(geom::clip_box(geom::Box(b.cx() + dx, b.cy() + dy, b.w(), b.h()), W, H));
        } catch (const ValidationError&) {
          // lesion moved out of view
        }
      }
    }

    ImageF frame(p.width, p.height);
    for (std::size_t y = 0; y < p.height; ++y) {
      for (std::size_t x = 0; x < p.width; ++x) {
        const double shade = 12.0 * std::sin(fx * static_cast<double>(x) + phx) *
                             std::cos(fy * static_cast<double>(y) + phy);
        frame.at(x, y) = p.background + shade - dark.at(x, y) + p.noise * gauss(rng);
      }
    }
    std::ostringstream name;
    name << "frame_" << std::setw(4) << std::setfill('0') << t << ".png";
    rec.file = name.str();
    out.frames.push_back(to_u8(frame));
    m.frames.push_back(std::move(rec));
  }
  return out;
}

// --- augmentation and resampling -------------------------------------------

ImageF augment(const ImageF& frame, double brightness_delta, double contrast_gain, bool clamp) {
  if (!(contrast_gain > 0.0)) throw ValidationError("augment: contrast gain must be positive");
  ImageF out = frame;
  if (frame.empty()) return out;
  double mean = 0.0;
  for (double v : frame.pixels) mean += v;
  mean /= static_cast<double>(frame.pixels.size());
  for (double& v : out.pixels) {
    v = contrast_gain * (v - mean) + mean + brightness_delta;
    if (clamp) v = std::clamp(v, 0.0, 255.0);
  }
  return out;
}

ImageU8 augment(const ImageU8& frame, double brightness_delta, double contrast_gain) {
  return to_u8(augment(to_float(frame), brightness_delta, contrast_gain, true));
}

ImageF augment_random(const ImageF& frame, const AugmentRanges& ranges, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> delta(-ranges.max_brightness_delta, ranges.max_brightness_delta);
  std::uniform_real_distribution<double> gain(ranges.min_gain, ranges.max_gain);
  const double d = delta(rng);
  const double g = gain(rng);
  return augment(frame, d, g, true);
}

namespace {

struct Tap {
  std::size_t src;
  double weight;
};

// Overlap of each destination cell with the source pixels along one axis.
std::vector<std::vector<Tap>> area_taps(std::size_t src, std::size_t dst) {
  std::vector<std::vector<Tap>> taps(dst);
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t o = 0; o < dst; ++o) {
    const double lo = static_cast<double>(o) * scale;
    const double hi = lo + scale;
    for (auto s = static_cast<std::size_t>(std::floor(lo)); s < src && static_cast<double>(s) < hi; ++s) {
      const double overlap = std::min(hi, static_cast<double>(s + 1)) - std::max(lo, static_cast<double>(s));
      if (overlap > 1e-12) taps[o].push_back({s, overlap / scale});
    }
  }
  return taps;
}

}  // namespace

ImageF downscale(const ImageF& frame, std::size_t target_w, std::size_t target_h) {
  if (target_w == 0 || target_h == 0) throw ValidationError("downscale: empty target");
  if (target_w > frame.width || target_h > frame.height) {
    throw ValidationError("downscale: target larger than source");
  }
  if (target_w == frame.width && target_h == frame.height) return frame;
  const auto tx = area_taps(frame.width, target_w);
  const auto ty = area_taps(frame.height, target_h);
  ImageF rows(target_w, frame.height);
  for (std::size_t y = 0; y < frame.height; ++y) {
    for (std::size_t x = 0; x < target_w; ++x) {
      double acc = 0.0;
      for (const auto& t : tx[x]) acc += t.weight * frame.at(t.src, y);
      rows.at(x, y) = acc;
    }
  }
  ImageF out(target_w, target_h);
  for (std::size_t y = 0; y < target_h; ++y) {
    for (std::size_t x = 0; x < target_w; ++x) {
      double acc = 0.0;
      for (const auto& t : ty[y]) acc += t.weight * rows.at(x, t.src);
      out.at(x, y) = acc;
    }
  }
  return out;
}

ImageU8 downscale(const ImageU8& frame, std::size_t target_w, std::size_t target_h) {
  return to_u8(downscale(to_float(frame), target_w, target_h));
}

// --- splitting --------------------------------------------------------------

std::size_t SplitPlan::fold_of(const std::string& id) const {
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (std::find(folds[f].begin(), folds[f].end(), id) != folds[f].end()) return f;
  }
  throw NotFoundError("split: id '" + id + "' not in any fold");
}

SplitPlan stratified_kfold(std::span<const SplitItem> items, std::size_t k, std::uint64_t seed,
                           std::string grouping_key) {
  if (k < 2) throw ValidationError("stratified_kfold: need k >= 2");

  std::map<std::string, std::vector<const SplitItem*>> groups;
  std::set<std::string> ids;
  std::vector<std::string> classes;
  for (const auto& it : items) {
    if (!ids.insert(it.id).second) throw ValidationError("stratified_kfold: duplicate id '" + it.id + "'");
    groups[it.group].push_back(&it);
    if (std::find(classes.begin(), classes.end(), it.cls) == classes.end()) classes.push_back(it.cls);
  }
  if (groups.size() < k) {
    throw ValidationError("stratified_kfold: " + std::to_string(groups.size()) + " groups for " +
                          std::to_string(k) + " folds");
  }
  std::sort(classes.begin(), classes.end());
  auto class_idx = [&](const std::string& c) {
    return static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), c) - classes.begin());
  };

  std::vector<std::string> order;
  for (const auto& [g, members] : groups) order.push_back(g);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return groups[a].size() > groups[b].size();
  });

  std::vector<std::vector<std::size_t>> fold_class(k, std::vector<std::size_t>(classes.size(), 0));
  std::vector<std::size_t> fold_size(k, 0);
  SplitPlan plan;
  plan.folds.resize(k);
  plan.grouping_key = std::move(grouping_key);
  plan.seed = seed;

  for (const auto& g : order) {
    std::vector<std::size_t> counts(classes.size(), 0);
    for (const auto* it : groups[g]) ++counts[class_idx(it->cls)];
    std::size_t best = 0;
    std::size_t best_occ = SIZE_MAX, best_size = SIZE_MAX;
    for (std::size_t f = 0; f < k; ++f) {
      std::size_t occ = 0;
      for (std::size_t c = 0; c < classes.size(); ++c) occ += counts[c] * fold_class[f][c];
      if (occ < best_occ || (occ == best_occ && fold_size[f] < best_size)) {
        best = f;
        best_occ = occ;
        best_size = fold_size[f];
      }
    }
    for (std::size_t c = 0; c < classes.size(); ++c) fold_class[best][c] += counts[c];
    for (const auto* it : groups[g]) plan.folds[best].push_back(it->id);
    fold_size[best] += groups[g].size();
  }
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

// --- statistics -------------------------------------------------------------

namespace {

void accumulate_row(StatsRow& row, std::set<std::string>& patients, const SequenceManifest& m) {
  patients.insert(m.patient_id);
  row.patients = patients.size();
  ++row.sequences;
  for (const auto& f : m.frames) {
    switch (f.interval) {
      case Interval::no_contrast: ++row.no_contrast; break;
      case Interval::introducing: ++row.introducing; break;
      case Interval::optimal: ++row.optimal; break;
      case Interval::vanishing: ++row.vanishing; break;
    }
    row.box_annotations += f.boxes.size();
    if (f.is_reference) row.stenoses += f.boxes.size();
  }
}

}  // namespace

ManifestStats manifest_stats(std::span<const SequenceManifest> manifests) {
  ManifestStats s;
  std::set<std::string> all;
  std::map<std::string, std::set<std::string>> view_patients, nl_patients;
  for (const auto& m : manifests) {
    accumulate_row(s.total, all, m);
    bool lesion = false;
    for (const auto& f : m.frames) lesion = lesion || !f.boxes.empty();
    const std::string v = to_string(m.view);
    if (lesion) {
      accumulate_row(s.per_view[v], view_patients[v], m);
    } else {
      accumulate_row(s.no_lesion_per_view[v], nl_patients[v], m);
    }
  }
  return s;
}

std::string format_stats(const ManifestStats& s) {
  std::ostringstream os;
  auto row = [&](const std::string& name, const StatsRow& r) {
    os << std::left << std::setw(18) << name << std::right << std::setw(9) << r.patients << std::setw(10)
       << r.sequences << std::setw(12) << r.no_contrast << std::setw(12) << r.introducing << std::setw(9)
       << r.optimal << std::setw(10) << r.vanishing << std::setw(10) << r.stenoses << std::setw(8)
       << r.box_annotations << '\n';
  };
  os << std::left << std::setw(18) << "Sequence Detail" << std::right << std::setw(9) << "Patients"
     << std::setw(10) << "Sequences" << std::setw(12) << "NoContrast" << std::setw(12) << "Introducing"
     << std::setw(9) << "Optimal" << std::setw(10) << "Vanishing" << std::setw(10) << "Stenoses"
     << std::setw(8) << "Boxes" << '\n';
  row("Total", s.total);
  for (const auto& [v, r] : s.per_view) row("Lesion " + v, r);
  for (const auto& [v, r] : s.no_lesion_per_view) row("No Lesion " + v, r);
  return os.str();
}

}  // namespace stenosis::data
