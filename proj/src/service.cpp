// SPDX-License-Identifier: Apache-2.0
#include "stenosis/service.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "stenosis/errors.hpp"
#include "stenosis/image.hpp"

namespace stenosis::service {

using nlohmann::json;

std::string to_string(Action a) {
  switch (a) {
    case Action::set_boxes: return "set_boxes";
    case Action::delete_box: return "delete_box";
    case Action::repropagate_from: return "repropagate_from";
    case Action::unpin: return "unpin";
  }
  return "set_boxes";
}

Action action_from_string(const std::string& s) {
  if (s == "set_boxes") return Action::set_boxes;
  if (s == "delete_box") return Action::delete_box;
  if (s == "repropagate_from") return Action::repropagate_from;
  if (s == "unpin") return Action::unpin;
  throw ValidationError("unknown action: " + s);
}

namespace {

json boxes_json(const std::vector<geom::Box>& boxes) {
  json a = json::array();
  for (const auto& b : boxes) a.push_back({b.cx(), b.cy(), b.w(), b.h()});
  return a;
}

std::vector<geom::Box> boxes_from_json(const json& a) {
  if (!a.is_array()) throw ValidationError("boxes must be an array");
  std::vector<geom::Box> out;
  for (const auto& b : a) {
    if (!b.is_array() || b.size() != 4) throw ValidationError("box must be [cx, cy, w, h]");
    for (const auto& v : b) {
      if (!v.is_number()) throw ValidationError("box coordinates must be numbers");
    }
    out.emplace_back(b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>());
  }
  return out;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

json AnnotationEvent::to_json() const {
  json j = {{"id", id},
            {"sequence", sequence},
            {"frame", frame},
            {"action", to_string(action)},
            {"boxes", boxes_json(boxes)},
            {"timestamp", timestamp}};
  if (box_index) j["box_index"] = *box_index;
  if (!results.empty()) {
    json r = json::array();
    for (const auto& f : results) r.push_back({{"frame", f.frame}, {"boxes", boxes_json(f.boxes)}, {"flags", f.flags}});
    j["results"] = r;
  }
  return j;
}

AnnotationEvent AnnotationEvent::from_json(const json& j) {
  try {
    AnnotationEvent e;
    e.id = j.at("id").get<std::uint64_t>();
    e.sequence = j.at("sequence").get<std::string>();
    e.frame = j.at("frame").get<std::size_t>();
    e.action = action_from_string(j.at("action").get<std::string>());
    e.boxes = boxes_from_json(j.at("boxes"));
    if (j.contains("box_index")) e.box_index = j.at("box_index").get<std::size_t>();
    if (j.contains("results")) {
      for (const auto& r : j.at("results")) {
        PropagatedFrame f;
        f.frame = r.at("frame").get<std::size_t>();
        f.boxes = boxes_from_json(r.at("boxes"));
        f.flags = r.at("flags").get<std::vector<bool>>();
        if (f.flags.size() != f.boxes.size()) throw ValidationError("event: flags and boxes differ in length");
        e.results.push_back(std::move(f));
      }
    }
    e.timestamp = j.value("timestamp", "");
    return e;
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("event: ") + ex.what());
  }
}

bool FrameState::flagged() const {
  for (bool f : flags) {
    if (f) return true;
  }
  return false;
}

std::size_t SequenceState::flagged_frames() const {
  std::size_t n = 0;
  for (const auto& f : frames) n += f.flagged() ? 1 : 0;
  return n;
}

SequenceState initial_state(const data::SequenceManifest& m) {
  SequenceState s;
  for (const auto& fr : m.frames) {
    FrameState f;
    f.boxes = fr.boxes;
    f.flags.assign(fr.boxes.size(), false);
    f.pinned = fr.is_reference;
    s.frames.push_back(std::move(f));
  }
  return s;
}

void check_boxes_in_frame(const std::vector<geom::Box>& boxes, std::size_t width, std::size_t height) {
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  for (const auto& b : boxes) {
    const auto c = b.corners();
    if (c.x1 < 0.0 || c.y1 < 0.0 || c.x2 > w || c.y2 > h) throw ValidationError("box lies outside the frame");
  }
}

void apply_event(SequenceState& s, const data::SequenceManifest& m, const AnnotationEvent& e) {
  if (e.frame >= s.frames.size()) throw ValidationError("event frame out of range");
  if (e.id <= s.last_event_id) throw ValidationError("event ids must increase");
  auto& f = s.frames[e.frame];
  switch (e.action) {
    case Action::set_boxes:
    case Action::repropagate_from:
      check_boxes_in_frame(e.boxes, m.width, m.height);
      f.boxes = e.boxes;
      f.flags.assign(e.boxes.size(), false);
      f.pinned = true;
      break;
    case Action::delete_box:
      if (!e.box_index || *e.box_index >= f.boxes.size()) throw ValidationError("box index out of range");
      f.boxes.erase(f.boxes.begin() + static_cast<std::ptrdiff_t>(*e.box_index));
      f.flags.erase(f.flags.begin() + static_cast<std::ptrdiff_t>(*e.box_index));
      f.pinned = true;
      break;
    case Action::unpin:
      f.pinned = false;
      break;
  }
  if (e.action == Action::repropagate_from) {
    for (const auto& r : e.results) {
      if (r.frame >= s.frames.size()) throw ValidationError("propagated frame out of range");
      auto& t = s.frames[r.frame];
      if (t.pinned) continue;
      t.boxes = r.boxes;
      t.flags = r.flags;
    }
  }
  s.last_event_id = e.id;
}

SequenceState replay(const data::SequenceManifest& m, const std::vector<AnnotationEvent>& events) {
  SequenceState s = initial_state(m);
  for (const auto& e : events) {
    if (e.sequence != m.sequence_id) throw ValidationError("event belongs to another sequence");
    apply_event(s, m, e);
  }
  return s;
}

std::vector<AnnotationEvent> read_event_log(const std::filesystem::path& path) {
  std::vector<AnnotationEvent> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(AnnotationEvent::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

json frame_json(const data::SequenceManifest& m, std::size_t k, const FrameState& f) {
  const auto& fr = m.frames.at(k);
  return {{"frame", k},
          {"interval", data::to_string(fr.interval)},
          {"is_reference", fr.is_reference},
          {"file", fr.file},
          {"boxes", boxes_json(f.boxes)},
          {"flags", f.flags},
          {"flagged", f.flagged()},
          {"pinned", f.pinned}};
}

// ---------------------------------------------------------------------------

struct Store::Entry {
  data::SequenceOnDisk seq;
  std::filesystem::path log;
  std::mutex write_mu;
  mutable std::mutex ptr_mu;
  std::shared_ptr<const SequenceState> state;

  std::shared_ptr<const SequenceState> load() const {
    std::lock_guard lock(ptr_mu);
    return state;
  }
  void publish(SequenceState s) {
    auto p = std::make_shared<const SequenceState>(std::move(s));
    std::lock_guard lock(ptr_mu);
    state = std::move(p);
  }
};

Store::Store(ServiceConfig cfg) : cfg_(std::move(cfg)) {
  for (auto& seq : data::load_dataset(cfg_.data_root)) {
    auto e = std::make_unique<Entry>();
    e->log = seq.dir / "events.jsonl";
    e->seq = std::move(seq);
    e->publish(replay(e->seq.manifest, read_event_log(e->log)));
    const auto id = e->seq.manifest.sequence_id;
    if (!seqs_.emplace(id, std::move(e)).second) throw ValidationError("duplicate sequence id " + id);
  }
  if (cfg_.detections) detections_ = data::read_detections(*cfg_.detections);
}

Store::~Store() = default;

Store::Entry& Store::entry(const std::string& id) const {
  auto it = seqs_.find(id);
  if (it == seqs_.end()) throw NotFoundError("unknown sequence " + id);
  return *it->second;
}

std::vector<SequenceSummary> Store::list() const {
  std::vector<SequenceSummary> out;
  for (const auto& [id, e] : seqs_) {
    const auto& m = e->seq.manifest;
    out.push_back({id, m.view, m.frames.size(), e->load()->flagged_frames(), m.width, m.height});
  }
  return out;
}

const data::SequenceManifest& Store::manifest(const std::string& id) const { return entry(id).seq.manifest; }

std::shared_ptr<const SequenceState> Store::snapshot(const std::string& id) const { return entry(id).load(); }

std::filesystem::path Store::event_log_path(const std::string& id) const { return entry(id).log; }

FrameState Store::frame(const std::string& id, std::size_t k) const {
  auto s = snapshot(id);
  if (k >= s->frames.size()) throw NotFoundError("frame " + std::to_string(k) + " not in " + id);
  return s->frames[k];
}

std::string Store::frame_png(const std::string& id, std::size_t k) const {
  const auto& e = entry(id);
  if (k >= e.seq.manifest.frames.size()) throw NotFoundError("frame " + std::to_string(k) + " not in " + id);
  const auto path = e.seq.dir / e.seq.manifest.frames[k].file;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("missing frame file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

FrameState Store::commit(Entry& e, AnnotationEvent ev, std::size_t k) {
  // caller holds e.write_mu
  auto cur = e.load();
  SequenceState next = *cur;
  ev.id = cur->last_event_id + 1;
  ev.sequence = e.seq.manifest.sequence_id;
  ev.timestamp = utc_now();
  apply_event(next, e.seq.manifest, ev);
  {
    std::ofstream out(e.log, std::ios::app);
    out << ev.to_json().dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot append to " + e.log.string());
  }
  FrameState f = next.frames[k];
  e.publish(std::move(next));
  return f;
}

FrameState Store::set_boxes(const std::string& id, std::size_t k, const std::vector<geom::Box>& boxes) {
  auto& e = entry(id);
  if (k >= e.seq.manifest.frames.size()) throw NotFoundError("frame " + std::to_string(k) + " not in " + id);
  check_boxes_in_frame(boxes, e.seq.manifest.width, e.seq.manifest.height);
  std::lock_guard lock(e.write_mu);
  AnnotationEvent ev;
  ev.frame = k;
  ev.action = Action::set_boxes;
  ev.boxes = boxes;
  return commit(e, std::move(ev), k);
}

FrameState Store::delete_box(const std::string& id, std::size_t k, std::size_t box_index) {
  auto& e = entry(id);
  if (k >= e.seq.manifest.frames.size()) throw NotFoundError("frame " + std::to_string(k) + " not in " + id);
  std::lock_guard lock(e.write_mu);
  if (box_index >= e.load()->frames[k].boxes.size()) throw NotFoundError("no box " + std::to_string(box_index));
  AnnotationEvent ev;
  ev.frame = k;
  ev.action = Action::delete_box;
  ev.box_index = box_index;
  return commit(e, std::move(ev), k);
}

FrameState Store::unpin(const std::string& id, std::size_t k) {
  auto& e = entry(id);
  if (k >= e.seq.manifest.frames.size()) throw NotFoundError("frame " + std::to_string(k) + " not in " + id);
  std::lock_guard lock(e.write_mu);
  AnnotationEvent ev;
  ev.frame = k;
  ev.action = Action::unpin;
  return commit(e, std::move(ev), k);
}

std::vector<FrameState> Store::repropagate(const std::string& id, std::size_t from,
                                           const std::optional<std::vector<geom::Box>>& boxes) {
  auto& e = entry(id);
  const auto& m = e.seq.manifest;
  if (from >= m.frames.size()) throw NotFoundError("frame " + std::to_string(from) + " not in " + id);
  if (m.frames.size() > cfg_.max_propagation_frames) {
    throw ValidationError("sequence has " + std::to_string(m.frames.size()) + " frames, propagation cap is " +
                          std::to_string(cfg_.max_propagation_frames));
  }
  if (boxes) check_boxes_in_frame(*boxes, m.width, m.height);
  std::lock_guard lock(e.write_mu);
  const auto cur = e.load();
  AnnotationEvent ev;
  ev.frame = from;
  ev.action = Action::repropagate_from;
  ev.boxes = boxes ? *boxes : cur->frames[from].boxes;

  std::vector<ImageU8> frames;
  frames.reserve(m.frames.size());
  for (std::size_t k = 0; k < m.frames.size(); ++k) frames.push_back(e.seq.load_frame(k));
  const auto tracked = track::propagate(frames, from, ev.boxes, cfg_.tracker);
  for (std::size_t k = 0; k < tracked.size(); ++k) {
    if (k == from || cur->frames[k].pinned) continue;
    PropagatedFrame pf;
    pf.frame = k;
    for (const auto& t : tracked[k]) {
      pf.boxes.push_back(t.box);
      pf.flags.push_back(t.flagged);
    }
    ev.results.push_back(std::move(pf));
  }
  commit(e, std::move(ev), from);
  return e.load()->frames;
}

std::vector<data::DetectionRecord> Store::detections(const std::string& id) const {
  entry(id);
  std::vector<data::DetectionRecord> out;
  for (const auto& r : detections_) {
    if (r.sequence == id) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  Store& store;
  httplib::Server svr;
  explicit Impl(Store& s) : store(s) {}
};

namespace {

void send_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFoundError& e) {
      send_json(res, {{"error", e.what()}}, 404);
    } catch (const ValidationError& e) {
      send_json(res, {{"error", e.what()}}, 400);
    } catch (const json::exception& e) {
      send_json(res, {{"error", std::string("bad request: ") + e.what()}}, 400);
    } catch (const std::exception& e) {
      send_json(res, {{"error", e.what()}}, 500);
    }
  };
}

std::size_t index_param(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw NotFoundError("bad index " + s);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw NotFoundError("bad index " + s);
  }
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

HttpServer::HttpServer(Store& store) : impl_(std::make_unique<Impl>(store)) {
  auto& svr = impl_->svr;
  Store& st = store;

  svr.Get("/api/sequences", guarded([&st](const httplib::Request&, httplib::Response& res) {
            json a = json::array();
            for (const auto& s : st.list()) {
              a.push_back({{"id", s.id},
                           {"view", data::to_string(s.view)},
                           {"frame_count", s.frame_count},
                           {"flagged_frames", s.flagged_frames},
                           {"width", s.width},
                           {"height", s.height}});
            }
            send_json(res, a);
          }));

  svr.Get(R"(/api/sequences/([^/]+)/frames/(\d+))",
          guarded([&st](const httplib::Request& req, httplib::Response& res) {
            const auto png = st.frame_png(req.matches[1], index_param(req.matches[2]));
            res.set_content(png, "image/png");
          }));

  svr.Get(R"(/api/sequences/([^/]+)/frames/(\d+)/boxes)",
          guarded([&st](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            const auto k = index_param(req.matches[2]);
            send_json(res, frame_json(st.manifest(id), k, st.frame(id, k)));
          }));

  svr.Put(R"(/api/sequences/([^/]+)/frames/(\d+)/boxes)",
          guarded([&st](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            const auto k = index_param(req.matches[2]);
            const auto body = parse_body(req);
            if (!body.is_object() || !body.contains("boxes")) throw ValidationError("body needs \"boxes\"");
            const auto f = st.set_boxes(id, k, boxes_from_json(body.at("boxes")));
            send_json(res, frame_json(st.manifest(id), k, f));
          }));

  svr.Delete(R"(/api/sequences/([^/]+)/frames/(\d+)/boxes/(\d+))",
             guarded([&st](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               const auto k = index_param(req.matches[2]);
               const auto f = st.delete_box(id, k, index_param(req.matches[3]));
               send_json(res, frame_json(st.manifest(id), k, f));
             }));

  svr.Post(R"(/api/sequences/([^/]+)/frames/(\d+)/unpin)",
           guarded([&st](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             const auto k = index_param(req.matches[2]);
             send_json(res, frame_json(st.manifest(id), k, st.unpin(id, k)));
           }));

  svr.Post(R"(/api/sequences/([^/]+)/repropagate)",
           guarded([&st](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.matches[1];
             const auto body = parse_body(req);
             if (!body.is_object() || !body.contains("from") || !body.at("from").is_number_unsigned()) {
               throw ValidationError("body needs a nonnegative integer \"from\"");
             }
             std::optional<std::vector<geom::Box>> boxes;
             if (body.contains("boxes") && !body.at("boxes").is_null()) boxes = boxes_from_json(body.at("boxes"));
             const auto frames = st.repropagate(id, body.at("from").get<std::size_t>(), boxes);
             const auto& m = st.manifest(id);
             json a = json::array();
             json flagged = json::array();
             for (std::size_t k = 0; k < frames.size(); ++k) {
               a.push_back(frame_json(m, k, frames[k]));
               if (frames[k].flagged()) flagged.push_back(k);
             }
             send_json(res, {{"frames", a}, {"flagged_frames", flagged}});
           }));

  svr.Get(R"(/api/sequences/([^/]+)/detections)",
          guarded([&st](const httplib::Request& req, httplib::Response& res) {
            json a = json::array();
            for (const auto& r : st.detections(req.matches[1])) {
              json boxes = json::array();
              for (const auto& d : r.detections) {
                boxes.push_back({d.box.cx(), d.box.cy(), d.box.w(), d.box.h(), d.score});
              }
              json rec = {{"frame", r.frame}, {"boxes", boxes}};
              if (!r.flags.empty()) rec["flags"] = r.flags;
              a.push_back(rec);
            }
            send_json(res, a);
          }));
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& svr = impl_->svr;
  if (port == 0) {
    const int p = svr.bind_to_any_port(host);
    if (p < 0) throw std::runtime_error("cannot bind " + host);
    return p;
  }
  if (!svr.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::serve() {
  if (!impl_->svr.listen_after_bind()) throw std::runtime_error("server stopped with an error");
}

void HttpServer::stop() {
  if (impl_) impl_->svr.stop();
}

bool HttpServer::running() const { return impl_->svr.is_running(); }

void HttpServer::wait_until_ready() const { impl_->svr.wait_until_ready(); }

}  // namespace stenosis::service
