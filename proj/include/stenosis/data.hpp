// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stenosis/geometry.hpp"
#include "stenosis/image.hpp"
#include "stenosis/inference.hpp"

namespace stenosis::data {

/// Contrast phase of a frame.
enum class Interval { no_contrast, introducing, optimal, vanishing };

enum class View { RCA, LCA, other };

std::string to_string(Interval i);
std::string to_string(View v);
Interval interval_from_string(const std::string& s);
View view_from_string(const std::string& s);

struct FrameRecord {
  std::size_t index = 0;
  Interval interval = Interval::optimal;
  std::vector<geom::Box> boxes;
  bool is_reference = false;
  std::string file;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct Provenance {
  std::string kind = "imported";  // "synthetic" | "imported"
  std::optional<std::uint64_t> seed;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// One angiography sequence. Frame indices run 0..n-1 and exactly one frame is
/// the reference frame.
struct SequenceManifest {
  std::string sequence_id;
  std::string patient_id;
  View view = View::other;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<FrameRecord> frames;
  Provenance provenance;

  std::size_t reference_index() const;  // throws when no reference frame is marked
  void validate() const;                // throws ValidationError

  friend bool operator==(const SequenceManifest&, const SequenceManifest&) = default;
};

inline constexpr int kManifestSchema = 1;

// --- persistence -----------------------------------------------------------

std::string manifest_to_json(const SequenceManifest& m);
SequenceManifest manifest_from_json(const std::string& text);
void save_manifest(const std::filesystem::path& path, const SequenceManifest& m);
SequenceManifest load_manifest(const std::filesystem::path& path);

/// A dataset directory holds one subdirectory per sequence, each with a
/// manifest.json and its frame PNGs.
struct SequenceOnDisk {
  std::filesystem::path dir;
  SequenceManifest manifest;

  ImageU8 load_frame(std::size_t index) const;
};

std::vector<SequenceOnDisk> load_dataset(const std::filesystem::path& root);
void save_sequence(const std::filesystem::path& dir, const SequenceManifest& m,
                   std::span<const ImageU8> frames);

/// Detections file: JSON lines {"sequence", "frame", "boxes": [[cx,cy,w,h,score], ...]}.
/// Extra per-record fields (for instance "flags") are preserved on read.
struct DetectionRecord {
  std::string sequence;
  std::size_t frame = 0;
  std::vector<infer::Detection> detections;
  std::vector<bool> flags;
};

void write_detections(const std::filesystem::path& path, std::span<const DetectionRecord> recs);
std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);

// --- synthesis -------------------------------------------------------------

struct PhaseLengths {
  std::size_t no_contrast = 5;
  std::size_t introducing = 1;
  std::size_t optimal = 10;
  std::size_t vanishing = 8;

  std::size_t total() const noexcept { return no_contrast + introducing + optimal + vanishing; }
};

struct SynthParams {
  std::size_t width = 128;
  std::size_t height = 128;
  View view = View::RCA;
  std::size_t control_points = 5;
  double vessel_width = 6.0;    // nominal full width, pixels
  std::size_t stenosis_count = 1;
  double narrowing = 0.4;       // remaining width fraction at the lesion, (0,1)
  std::vector<double> stenosis_positions;  // arclength fractions; random when empty
  PhaseLengths phases;
  double noise = 6.0;           // gaussian sigma, intensity levels
  double contrast_depth = 110.0;
  double background = 190.0;
  double motion_amplitude = 0.0;  // cardiac-like periodic shift, pixels
  double motion_period = 12.0;    // frames
  double drift_x = 0.0;           // pixels per frame
  double drift_y = 0.0;
  std::uint64_t seed = 0;
  std::string sequence_id = "seq0000";
  std::string patient_id = "p0000";
};

struct SynthSequence {
  std::vector<ImageU8> frames;
  SequenceManifest manifest;
  std::vector<geom::Box> lesion_boxes_at_rest;  // before motion, as placed
  std::vector<std::pair<double, double>> centerline;  // main vessel at rest, ~0.5 px steps
  std::vector<double> frame_dx, frame_dy;            // applied motion per frame
};

/// Dark curvilinear vessel with gaussian cross-section on a noisy bright
/// background. Lesions are local width narrowings boxed by a square of side
/// 4x the nominal vessel width. Opacity ramps 0 -> 1 -> 0 across the phases;
/// the reference frame is the middle optimal frame.
SynthSequence synth_sequence(const SynthParams& p);

// --- augmentation and resampling -------------------------------------------

/// out = clamp(gain * (in - mean) + mean + delta) with mean the image mean.
ImageU8 augment(const ImageU8& frame, double brightness_delta, double contrast_gain);
ImageF augment(const ImageF& frame, double brightness_delta, double contrast_gain,
               bool clamp = true);

struct AugmentRanges {
  double max_brightness_delta = 20.0;
  double min_gain = 0.8;
  double max_gain = 1.2;
};

/// Draws delta uniform in [-max, max] and gain uniform in [min_gain, max_gain].
ImageF augment_random(const ImageF& frame, const AugmentRanges& ranges, std::mt19937_64& rng);

/// Area-weighted resampling to target_w x target_h. Throws on upscaling.
ImageF downscale(const ImageF& frame, std::size_t target_w, std::size_t target_h);
ImageU8 downscale(const ImageU8& frame, std::size_t target_w, std::size_t target_h);

// --- splitting --------------------------------------------------------------

struct SplitItem {
  std::string id;
  std::string group;
  std::string cls;
};

struct SplitPlan {
  std::vector<std::vector<std::string>> folds;
  std::string grouping_key;       // "patient" or "sequence"
  std::string stratification_key = "view";
  std::uint64_t seed = 0;

  std::size_t fold_of(const std::string& id) const;  // throws NotFoundError
};

SplitPlan stratified_kfold(std::span<const SplitItem> items, std::size_t k, std::uint64_t seed,
                           std::string grouping_key = "patient");

std::string split_to_json(const SplitPlan& plan);
SplitPlan split_from_json(const std::string& text);

// --- statistics -------------------------------------------------------------

struct StatsRow {
  std::size_t patients = 0;
  std::size_t sequences = 0;
  std::size_t no_contrast = 0;
  std::size_t introducing = 0;
  std::size_t optimal = 0;
  std::size_t vanishing = 0;
  std::size_t stenoses = 0;          // boxes on reference frames
  std::size_t box_annotations = 0;   // boxes on all frames

  friend bool operator==(const StatsRow&, const StatsRow&) = default;
};

struct ManifestStats {
  StatsRow total;
  std::map<std::string, StatsRow> per_view;
  std::map<std::string, StatsRow> no_lesion_per_view;
};

ManifestStats manifest_stats(std::span<const SequenceManifest> manifests);
std::string format_stats(const ManifestStats& s);

}  // namespace stenosis::data
