#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gonerf/config.hpp"
#include "gonerf/geometry.hpp"
#include "gonerf/providers.hpp"
#include "gonerf/scene_cache.hpp"
#include "gonerf/trainer.hpp"

// After Eigen: see http_provider.hpp.
#include <httplib.h>
#include <nlohmann/json.hpp>

// Local HTTP service for the placement and generation workflow.
//
//   GET  /views                           camera list, thumbnail URLs, ETag
//   GET  /views/{id}/thumbnail.png        half-resolution cached color
//   GET  /views/{id}/color.png            full-resolution cached color
//   POST /place                           clicks -> box, projected corners, mask outlines
//   POST /jobs                            submit a training job
//   GET  /jobs                            all jobs
//   GET  /jobs/{id}                       job status
//   POST /jobs/{id}/cancel                cancel (409 once terminal)
//   GET  /jobs/{id}/losses                loss records, increasing step
//   GET  /jobs/{id}/render?view=&step=    preview or final composite PNG
namespace gonerf {

inline constexpr int kServiceSchema = 1;

struct ServiceOptions {
  std::filesystem::path jobs_dir = "jobs";
  TrainConfig base_config;
  std::string cors_origin = "*";
  int thumbnail_factor = 2;
};

namespace detail {

inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline nlohmann::json box_json(const OrientedBox3D& b) {
  nlohmann::json axes = nlohmann::json::array();
  for (int c = 0; c < 3; ++c) axes.push_back(vec_json(b.axes.col(c)));
  return {{"center", vec_json(b.center)}, {"axes", axes}, {"half_extents", vec_json(b.half_extents)},
          {"record", box_record(b)}};
}

inline Vec3 json_vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidInput("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline OrientedBox3D box_from_json(const nlohmann::json& j) {
  if (j.is_string()) return parse_box_record(j.get<std::string>());
  if (j.contains("record")) return parse_box_record(j.at("record").get<std::string>());
  OrientedBox3D b;
  b.center = json_vec3(j.at("center"));
  const auto& axes = j.at("axes");
  if (!axes.is_array() || axes.size() != 3) throw InvalidInput("box axes: expected three columns");
  for (int c = 0; c < 3; ++c) b.axes.col(c) = json_vec3(axes[c]);
  b.half_extents = json_vec3(j.at("half_extents"));
  b.validate();
  return b;
}

inline double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Convex hull (counter-clockwise in image coordinates, y down) of the corners
// of every set mask pixel. Box silhouettes in front of the camera are convex.
inline std::vector<Vec2> mask_outline(const Mask& m) {
  std::vector<Vec2> pts;
  for (int y = 0; y < m.height; ++y) {
    int first = -1, last = -1;
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y)) {
        if (first < 0) first = x;
        last = x;
      }
    if (first < 0) continue;
    for (const double dy : {0.0, 1.0}) {
      pts.emplace_back(first, y + dy);
      pts.emplace_back(last + 1, y + dy);
    }
  }
  if (pts.size() < 3) return pts;
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

inline std::string png_string(const Image& img) {
  const auto bytes = png::encode8(img);
  return {bytes.begin(), bytes.end()};
}

}  // namespace detail

// Placement result shared by /place and the CLI.
inline nlohmann::json placement_json(const SceneCache& cache, const ClickSelection& sel) {
  const SceneViewRGBD& view = cache.view(sel.view_id);
  const OrientedBox3D box =
      build_box(sel, view.camera, [&](const Vec2& px) { return bilinear_depth(view.depth, px); });
  nlohmann::json out;
  out["schema_version"] = kServiceSchema;
  out["box"] = detail::box_json(box);
  out["views"] = nlohmann::json::array();
  for (const auto& v : cache.views) {
    nlohmann::json corners = nlohmann::json::array();
    for (const Vec3& c : box.corners()) {
      const Projection p = project(v.camera, c);
      corners.push_back({{"u", p.pixel.x()}, {"v", p.pixel.y()}, {"depth", p.depth}, {"behind_camera", p.behind_camera}});
    }
    nlohmann::json outline = nlohmann::json::array();
    for (const Vec2& q : detail::mask_outline(project_box_mask(box, v.camera))) outline.push_back({q.x(), q.y()});
    out["views"].push_back({{"view_id", v.view_id}, {"corners", corners}, {"mask_outline", {outline}}});
  }
  return out;
}

inline ClickSelection parse_placement(const nlohmann::json& j) {
  ClickSelection sel;
  sel.view_id = j.at("view_id").get<int>();
  const auto& clicks = j.at("clicks");
  if (!clicks.is_array() || clicks.size() != 3) throw InvalidInput("clicks: expected three [u, v] pairs");
  for (int i = 0; i < 3; ++i) {
    const auto& c = clicks[i];
    if (!c.is_array() || c.size() != 2) throw InvalidInput("clicks: expected three [u, v] pairs");
    sel.clicks[i] = Vec2(c[0].get<double>(), c[1].get<double>());
  }
  if (j.contains("ratios")) sel.size_ratios = detail::json_vec3(j.at("ratios"));
  return sel;
}

class Service {
 public:
  Service(SceneCache cache, ServiceOptions opts) : cache_(std::move(cache)), opts_(std::move(opts)) {
    cache_.validate();
    build_view_index();
    routes();
    worker_ = std::thread([this] { work(); });
  }

  ~Service() { stop(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds host:port (port 0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw IoError("service: cannot bind " + host + ":" + std::to_string(port));
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Blocks serving requests until stop() is called from elsewhere.
  void serve(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw IoError("service: cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (stopping_) return;
      stopping_ = true;
      for (auto& [id, job] : jobs_) job->cancel = true;
    }
    cv_.notify_all();
    server_.stop();
    if (listener_.joinable()) listener_.join();
    if (worker_.joinable()) worker_.join();
  }

  int port() const { return port_; }

 private:
  struct Job {
    std::string id;
    OrientedBox3D box;
    TrainConfig cfg;
    std::optional<int> reference_view;
    std::filesystem::path run_dir;
    JobStatus status = JobStatus::queued;
    std::string error;
    long step = 0;
    std::vector<nlohmann::json> losses;
    std::map<int, long> latest_preview;
    std::map<int, std::filesystem::path> finals;
    std::optional<long> last_checkpoint;
    std::vector<std::string> history{"queued"};
    std::atomic<bool> cancel{false};
  };

  void build_view_index() {
    views_json_["schema_version"] = kServiceSchema;
    views_json_["views"] = nlohmann::json::array();
    std::vector<const SceneViewRGBD*> sorted;
    for (const auto& v : cache_.views) sorted.push_back(&v);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->view_id < b->view_id; });
    for (const auto* v : sorted) {
      const auto cam = detail::camera_json(v->camera);
      const std::string id = std::to_string(v->view_id);
      views_json_["views"].push_back({{"view_id", v->view_id},
                                      {"width", v->camera.width},
                                      {"height", v->camera.height},
                                      {"intrinsics", cam.at("intrinsics")},
                                      {"cam_to_world", cam.at("cam_to_world")},
                                      {"thumbnail_url", "/views/" + id + "/thumbnail.png"},
                                      {"color_url", "/views/" + id + "/color.png"}});
      thumbnails_[v->view_id] = detail::png_string(downsample(v->color, opts_.thumbnail_factor));
      colors_[v->view_id] = detail::png_string(v->color);
    }
    views_body_ = views_json_.dump();
    etag_ = "\"" + std::to_string(std::hash<std::string>{}(views_body_)) + "\"";
  }

  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"schema_version", kServiceSchema}, {"error", message}});
  }

  // Wraps a handler with JSON error mapping.
  template <class F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, std::string("malformed request: ") + e.what());
      } catch (const ValidationError& e) {
        send_error(res, 422, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  }

  void routes() {
    server_.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", opts_.cors_origin);
      res.set_header("Access-Control-Expose-Headers", "ETag, X-Step");
    });
    server_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type, If-None-Match");
      res.status = 204;
    });

    server_.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"schema_version", kServiceSchema}, {"status", "ok"}});
    });

    server_.Get("/views", [this](const httplib::Request& req, httplib::Response& res) {
      res.set_header("ETag", etag_);
      if (req.get_header_value("If-None-Match") == etag_) {
        res.status = 304;
        return;
      }
      res.set_content(views_body_, "application/json");
    });

    server_.Get(R"(/views/(-?\d+)/(thumbnail|color)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
      const int id = std::stoi(req.matches[1]);
      const auto& table = req.matches[2] == "thumbnail" ? thumbnails_ : colors_;
      const auto it = table.find(id);
      if (it == table.end()) return send_error(res, 404, "unknown view " + std::to_string(id));
      res.set_content(it->second, "image/png");
    });

    server_.Post("/place", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const ClickSelection sel = parse_placement(nlohmann::json::parse(req.body));
      send_json(res, 200, placement_json(cache_, sel));
    }));

    server_.Post("/jobs", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 201, job_json(submit(nlohmann::json::parse(req.body))));
    }));

    server_.Get("/jobs", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mu_);
      nlohmann::json list = nlohmann::json::array();
      for (const auto& id : order_) list.push_back(job_json_locked(*jobs_.at(id)));
      send_json(res, 200, {{"schema_version", kServiceSchema}, {"jobs", list}});
    });

    server_.Get(R"(/jobs/([\w-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mu_);
      const auto it = jobs_.find(req.matches[1]);
      if (it == jobs_.end()) return send_error(res, 404, "unknown job");
      send_json(res, 200, job_json_locked(*it->second));
    });

    server_.Post(R"(/jobs/([\w-]+)/cancel)", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mu_);
      const auto it = jobs_.find(req.matches[1]);
      if (it == jobs_.end()) return send_error(res, 404, "unknown job");
      Job& job = *it->second;
      if (is_terminal(job.status)) return send_error(res, 409, "job is already " + to_string(job.status));
      job.cancel = true;
      if (job.status == JobStatus::queued) transition(job, JobStatus::cancelled);
      send_json(res, 202, job_json_locked(job));
    });

    server_.Get(R"(/jobs/([\w-]+)/losses)", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mu_);
      const auto it = jobs_.find(req.matches[1]);
      if (it == jobs_.end()) return send_error(res, 404, "unknown job");
      long since = -1;
      if (req.has_param("since")) since = std::stol(req.get_param_value("since"));
      nlohmann::json records = nlohmann::json::array();
      for (const auto& r : it->second->losses)
        if (r.at("step").get<long>() > since) records.push_back(r);
      send_json(res, 200, {{"schema_version", kServiceSchema}, {"job_id", it->first}, {"records", records}});
    });

    server_.Get(R"(/jobs/([\w-]+)/render)", [this](const httplib::Request& req, httplib::Response& res) {
      std::filesystem::path file;
      long step = -1;
      {
        std::lock_guard<std::mutex> lock(mu_);
        const auto it = jobs_.find(req.matches[1]);
        if (it == jobs_.end()) return send_error(res, 404, "unknown job");
        const Job& job = *it->second;
        if (!req.has_param("view")) return send_error(res, 422, "missing view parameter");
        int view = 0;
        try {
          view = std::stoi(req.get_param_value("view"));
          if (req.has_param("step")) step = std::stol(req.get_param_value("step"));
        } catch (const std::exception&) {
          return send_error(res, 422, "view and step must be integers");
        }
        if (step >= 0) {
          file = preview_path(job.run_dir, step, view);
        } else if (const auto f = job.finals.find(view); f != job.finals.end()) {
          file = f->second;
          step = job.step;
        } else if (const auto p = job.latest_preview.find(view); p != job.latest_preview.end()) {
          step = p->second;
          file = preview_path(job.run_dir, step, view);
        } else {
          return send_error(res, 404, "no render available for view " + std::to_string(view));
        }
      }
      if (!std::filesystem::exists(file)) return send_error(res, 404, "no render at that step");
      const auto bytes = png::read_file(file);
      res.set_header("X-Step", std::to_string(step));
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    });
  }

  static std::filesystem::path preview_path(const std::filesystem::path& run_dir, long step, int view) {
    return run_dir / "previews" / ("step_" + std::to_string(step) + "_view_" + std::to_string(view) + ".png");
  }

  std::string submit(const nlohmann::json& j) {
    auto job = std::make_unique<Job>();
    job->box = detail::box_from_json(j.at("box"));
    job->cfg = opts_.base_config;
    if (j.contains("overrides")) {
      config::KeyValues kv;
      for (const auto& [k, v] : j.at("overrides").items())
        kv[k] = v.is_string() ? v.get<std::string>() : v.dump();
      config::apply_values(job->cfg, kv);
    }
    job->cfg.prompt = j.at("prompt").get<std::string>();
    if (job->cfg.prompt.empty()) throw InvalidInput("prompt must be non-empty");
    if (j.contains("reference_view") && !j.at("reference_view").is_null()) {
      job->reference_view = j.at("reference_view").get<int>();
      (void)cache_.view(*job->reference_view);
      job->cfg.weights.reference_mode = ReferenceMode::style;
    }
    job->cfg.validate();
    bool visible = false;
    for (const auto& v : cache_.views) visible = visible || project_box_mask(job->box, v.camera).any();
    if (!visible) throw InvalidInput("the box projects to an empty mask in every cached view");

    std::lock_guard<std::mutex> lock(mu_);
    job->id = "job-" + std::to_string(++next_id_);
    job->run_dir = opts_.jobs_dir / job->id;
    const std::string id = job->id;
    order_.push_back(id);
    jobs_.emplace(id, std::move(job));
    queue_.push_back(id);
    cv_.notify_all();
    return id;
  }

  nlohmann::json job_json(const std::string& id) {
    std::lock_guard<std::mutex> lock(mu_);
    return job_json_locked(*jobs_.at(id));
  }

  nlohmann::json job_json_locked(const Job& job) const {
    nlohmann::json j{{"schema_version", kServiceSchema},
                     {"job_id", job.id},
                     {"status", to_string(job.status)},
                     {"history", job.history},
                     {"prompt", job.cfg.prompt},
                     {"box", detail::box_json(job.box)},
                     {"step", job.step},
                     {"total_steps", job.cfg.total_steps},
                     {"run_dir", job.run_dir.string()},
                     {"cancel_requested", job.cancel.load()}};
    if (!job.error.empty()) j["error"] = job.error;
    if (job.last_checkpoint) j["last_checkpoint_step"] = *job.last_checkpoint;
    return j;
  }

  void transition(Job& job, JobStatus to) {
    if (!valid_transition(job.status, to))
      throw ContractViolation("invalid job transition " + to_string(job.status) + " -> " + to_string(to));
    job.status = to;
    job.history.push_back(to_string(to));
  }

  void work() {
    for (;;) {
      Job* job = nullptr;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        job = jobs_.at(queue_.front()).get();
        queue_.pop_front();
        if (job->status != JobStatus::queued) continue;
        transition(*job, JobStatus::running);
      }
      run_job(*job);
    }
  }

  void run_job(Job& job) {
    JobStatus final_status = JobStatus::failed;
    std::string error;
    try {
      ProviderHandle provider = make_provider(job.cfg, cache_, job.box);
      Trainer trainer(cache_, job.box, job.cfg, *provider);
      if (job.reference_view)
        trainer.set_style_reference(cache_.view(*job.reference_view).color,
                                    std::make_shared<RandomProjectionExtractor>());
      TrainCallbacks cb;
      cb.on_record = [&](const LossRecord& r) {
        std::lock_guard<std::mutex> lock(mu_);
        job.step = r.step + 1;
        job.losses.push_back(r.to_json());
      };
      cb.on_preview = [&](long step, int view, const Image&) {
        std::lock_guard<std::mutex> lock(mu_);
        job.latest_preview[view] = step;
      };
      cb.on_checkpoint = [&](long step, const std::filesystem::path&) {
        std::lock_guard<std::mutex> lock(mu_);
        job.last_checkpoint = step;
      };
      final_status = trainer.run(job.run_dir, cb, &job.cancel);
      if (final_status == JobStatus::completed) {
        std::map<int, std::filesystem::path> finals;
        std::filesystem::create_directories(job.run_dir / "final");
        for (const auto& v : cache_.views) {
          const auto path = job.run_dir / "final" / ("composite_" + std::to_string(v.view_id) + ".png");
          png::write_png(path, trainer.render(v.view_id).I);
          finals[v.view_id] = path;
        }
        std::lock_guard<std::mutex> lock(mu_);
        job.finals = std::move(finals);
      }
    } catch (const std::exception& e) {
      final_status = JobStatus::failed;
      error = e.what();
      log::warn("job " + job.id + " failed: " + error);
    }
    std::lock_guard<std::mutex> lock(mu_);
    job.error = error;
    transition(job, final_status);
  }

  SceneCache cache_;
  ServiceOptions opts_;
  nlohmann::json views_json_;
  std::string views_body_;
  std::string etag_;
  std::map<int, std::string> thumbnails_;
  std::map<int, std::string> colors_;

  httplib::Server server_;
  std::thread listener_;
  std::thread worker_;
  int port_ = -1;

  std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
  long next_id_ = 0;
  std::map<std::string, std::unique_ptr<Job>> jobs_;
  std::vector<std::string> order_;
  std::deque<std::string> queue_;
};

}  // namespace gonerf
