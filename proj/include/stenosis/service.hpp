// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "stenosis/data.hpp"
#include "stenosis/geometry.hpp"
#include "stenosis/tracker.hpp"

namespace stenosis::service {

enum class Action { set_boxes, delete_box, repropagate_from, unpin };

std::string to_string(Action a);
Action action_from_string(const std::string& s);

struct PropagatedFrame {
  std::size_t frame = 0;
  std::vector<geom::Box> boxes;
  std::vector<bool> flags;
};

/// One line of events.jsonl.
struct AnnotationEvent {
  std::uint64_t id = 0;
  std::string sequence;
  std::size_t frame = 0;
  Action action = Action::set_boxes;
  std::vector<geom::Box> boxes;          // set_boxes, repropagate_from (boxes at `frame`)
  std::optional<std::size_t> box_index;  // delete_box
  std::vector<PropagatedFrame> results;  // repropagate_from: tracker output as applied
  std::string timestamp;                 // UTC, ISO 8601

  nlohmann::json to_json() const;
  static AnnotationEvent from_json(const nlohmann::json& j);
};

struct FrameState {
  std::vector<geom::Box> boxes;
  std::vector<bool> flags;  // per box
  bool pinned = false;

  bool flagged() const;
  friend bool operator==(const FrameState&, const FrameState&) = default;
};

struct SequenceState {
  std::vector<FrameState> frames;
  std::uint64_t last_event_id = 0;

  std::size_t flagged_frames() const;
  friend bool operator==(const SequenceState&, const SequenceState&) = default;
};

/// Initial annotation state: manifest boxes, reference frame pinned.
SequenceState initial_state(const data::SequenceManifest& m);

/// Pure transition used both live and on replay. Throws ValidationError when
/// the event does not fit the state.
void apply_event(SequenceState& state, const data::SequenceManifest& m, const AnnotationEvent& e);

SequenceState replay(const data::SequenceManifest& m, const std::vector<AnnotationEvent>& events);

std::vector<AnnotationEvent> read_event_log(const std::filesystem::path& path);

struct ServiceConfig {
  std::filesystem::path data_root;
  std::optional<std::filesystem::path> detections;  // JSON-lines detections file
  track::TrackerParams tracker;
  std::size_t max_propagation_frames = 256;
};

struct SequenceSummary {
  std::string id;
  data::View view = data::View::other;
  std::size_t frame_count = 0;
  std::size_t flagged_frames = 0;
  std::size_t width = 0, height = 0;
};

/// Annotation store over a dataset directory. Writes to one sequence are
/// serialized; readers get immutable snapshots without taking the write lock.
class Store {
 public:
  explicit Store(ServiceConfig cfg);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  std::vector<SequenceSummary> list() const;
  const data::SequenceManifest& manifest(const std::string& id) const;
  std::shared_ptr<const SequenceState> snapshot(const std::string& id) const;
  FrameState frame(const std::string& id, std::size_t k) const;
  std::string frame_png(const std::string& id, std::size_t k) const;
  std::filesystem::path event_log_path(const std::string& id) const;

  FrameState set_boxes(const std::string& id, std::size_t k, const std::vector<geom::Box>& boxes);
  FrameState delete_box(const std::string& id, std::size_t k, std::size_t box_index);
  FrameState unpin(const std::string& id, std::size_t k);
  /// Tracks `boxes` (or the frame's current boxes) over the whole sequence and
  /// writes every unpinned frame. Returns the state of all frames afterwards.
  std::vector<FrameState> repropagate(const std::string& id, std::size_t from,
                                      const std::optional<std::vector<geom::Box>>& boxes);

  std::vector<data::DetectionRecord> detections(const std::string& id) const;

 private:
  struct Entry;
  Entry& entry(const std::string& id) const;
  FrameState commit(Entry& e, AnnotationEvent ev, std::size_t k);

  ServiceConfig cfg_;
  std::map<std::string, std::unique_ptr<Entry>> seqs_;
  std::vector<data::DetectionRecord> detections_;
};

/// Throws ValidationError unless every box lies inside a width x height frame.
void check_boxes_in_frame(const std::vector<geom::Box>& boxes, std::size_t width, std::size_t height);

nlohmann::json frame_json(const data::SequenceManifest& m, std::size_t k, const FrameState& f);

/// HTTP front end. Routes:
///   GET  /api/sequences
///   GET  /api/sequences/{id}/frames/{k}            image/png
///   GET  /api/sequences/{id}/frames/{k}/boxes
///   PUT  /api/sequences/{id}/frames/{k}/boxes      {"boxes": [[cx,cy,w,h], ...]}
///   DELETE /api/sequences/{id}/frames/{k}/boxes/{i}
///   POST /api/sequences/{id}/frames/{k}/unpin
///   POST /api/sequences/{id}/repropagate           {"from": k, "boxes": [...]?}
///   GET  /api/sequences/{id}/detections
class HttpServer {
 public:
  explicit HttpServer(Store& store);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void serve();
  void stop();
  bool running() const;
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace stenosis::service
