// gonerf: scene cache creation, box placement, training, rendering,
// evaluation and the local service.
#include <csignal>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gonerf/gonerf.hpp"

namespace {

using namespace gonerf;

std::vector<double> parse_numbers(const std::string& text, std::size_t expected, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidInput(std::string(what) + ": '" + item + "' is not a number");
    }
  }
  if (out.size() != expected)
    throw InvalidInput(std::string(what) + ": expected " + std::to_string(expected) + " comma-separated numbers");
  return out;
}

OrientedBox3D read_box(const std::string& box, const std::string& box_file) {
  if (!box.empty()) return parse_box_record(box);
  if (box_file.empty()) throw InvalidInput("a box is required (--box or --box-file)");
  const auto bytes = png::read_file(box_file);
  return parse_box_record(std::string(bytes.begin(), bytes.end()));
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", message}, {"kind", kind}}.dump() << "\n";
}

struct Options {
  std::string cache, out, box, box_file, config_file, run_dir, field, clicks, ratios = "1,1,1";
  std::string format = "png8", background = "scene", scorer = "constant", host = "127.0.0.1";
  std::string jobs_dir = "jobs", cors = "*", views;
  std::vector<std::string> overrides;
  int n_views = 10, view = 0, views_count = 4, resolution = 64, port = 8080, K = 0;
  std::uint64_t seed = 0;
  double constant_score = 50.0;
  bool json = false;
};

TrainConfig load_config(const Options& o) {
  TrainConfig cfg;
  if (!o.config_file.empty()) config::apply_values(cfg, config::parse_file(o.config_file));
  config::KeyValues kv;
  for (const auto& s : o.overrides) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[config::trim(s.substr(0, eq))] = config::trim(s.substr(eq + 1));
  }
  config::apply_values(cfg, kv);
  cfg.validate();
  return cfg;
}

int make_scene(const Options& o) {
  const auto desk = synthetic::desk_scene(o.views_count, o.resolution);
  SceneCache cache = synthetic::make_synthetic_scene(desk.primitives, desk.cameras, desk.lighting);
  if (o.format == "f32") cache.color_format = ColorFormat::f32;
  else if (o.format != "png8") throw InvalidInput("--format must be png8 or f32");
  save_cache(cache, o.out);
  std::cout << nlohmann::json{{"cache", o.out}, {"views", cache.views.size()}}.dump() << "\n";
  return 0;
}

int place_box(const Options& o) {
  const SceneCache cache = load_cache(o.cache);
  ClickSelection sel;
  sel.view_id = o.view;
  const auto c = parse_numbers(o.clicks, 6, "--clicks");
  for (int i = 0; i < 3; ++i) sel.clicks[i] = Vec2(c[2 * i], c[2 * i + 1]);
  const auto r = parse_numbers(o.ratios, 3, "--ratios");
  sel.size_ratios = Vec3(r[0], r[1], r[2]);
  const nlohmann::json placement = placement_json(cache, sel);
  const std::string record = placement.at("box").at("record").get<std::string>();
  if (!o.out.empty()) png::write_file_atomic(o.out, record + "\n");
  std::cout << (o.json ? placement.dump(2) : record) << "\n";
  return 0;
}

int train(const Options& o) {
  const SceneCache cache = load_cache(o.cache);
  const OrientedBox3D box = read_box(o.box, o.box_file);
  const TrainConfig cfg = load_config(o);
  if (o.run_dir.empty()) throw InvalidInput("--run-dir is required");
  ProviderHandle provider = make_provider(cfg, cache, box);
  Trainer trainer(cache, box, cfg, *provider);
  TrainCallbacks cb;
  cb.on_record = [&](const LossRecord& r) {
    if ((r.step + 1) % 100 == 0 || r.step + 1 == cfg.total_steps)
      log::info("step " + std::to_string(r.step + 1) + "/" + std::to_string(cfg.total_steps) +
                " total " + std::to_string(r.total));
  };
  const JobStatus status = trainer.run(std::filesystem::path(o.run_dir), cb);
  std::cout << nlohmann::json{{"status", to_string(status)}, {"step", trainer.step()}, {"run_dir", o.run_dir}}.dump()
            << "\n";
  return 0;
}

std::vector<int> selected_views(const SceneCache& cache, const std::string& list) {
  if (list.empty()) return cache.view_ids();
  std::vector<int> ids;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      ids.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw InvalidInput("--views: '" + item + "' is not an integer");
    }
    (void)cache.view(ids.back());
  }
  return ids;
}

int render(const Options& o) {
  const SceneCache cache = load_cache(o.cache);
  const ObjectField field = ObjectField::load(o.field);
  RenderSettings rs;
  rs.K = o.K > 0 ? o.K : 192;
  rs.seed = o.seed;
  rs.background = parse_background_mode(o.background);
  std::vector<RenderOutput> renders;
  for (const int id : selected_views(cache, o.views)) renders.push_back(render_view(field, cache.view(id), rs));
  export_renders(renders, rs, o.out);
  std::cout << nlohmann::json{{"out", o.out}, {"renders", renders.size()}}.dump() << "\n";
  return 0;
}

int eval(const Options& o) {
  const SceneCache cache = load_cache(o.cache);
  const ObjectField field = ObjectField::load(o.field);
  std::unique_ptr<Scorer> scorer;
  if (o.scorer == "constant" || o.scorer == "stub") scorer = std::make_unique<ConstantScorer>(o.constant_score);
  else if (o.scorer != "none") throw InvalidInput("--scorer must be stub, constant or none");
  std::string prompt = "an object";
  if (!o.config_file.empty() || !o.overrides.empty()) prompt = load_config(o).prompt;
  const int K = o.K > 0 ? o.K : 192;
  EvalOutput result = eval_clip_protocol(field, cache, prompt, scorer.get(), o.n_views, o.seed, K);
  result.report.preservation = scene_preservation(field, cache, K);
  const std::filesystem::path out = o.out;
  std::filesystem::create_directories(out / "crops");
  for (std::size_t i = 0; i < result.crops.size(); ++i)
    png::write_png(out / "crops" / ("view_" + std::to_string(result.report.views[i].view_id) + ".png"),
                   result.crops[i]);
  RenderSettings rs;
  rs.K = K;
  export_renders(result.renders, rs, out / "renders");
  png::write_file_atomic(out / "eval_report.json", result.report.to_json().dump(2) + "\n");
  std::cout << result.report.to_json().dump() << "\n";
  return 0;
}

int serve(const Options& o) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ServiceOptions so;
  so.jobs_dir = o.jobs_dir;
  so.cors_origin = o.cors;
  so.base_config = load_config(o);
  Service service(load_cache(o.cache), so);
  const int port = service.start(o.host, o.port);
  log::info("serving on http://" + o.host + ":" + std::to_string(port));
  int sig = 0;
  sigwait(&signals, &sig);
  log::info("shutting down");
  service.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-guided object generation inside a placed box of a cached RGB-D scene"};
  app.require_subcommand(1);
  Options o;

  auto* ms = app.add_subcommand("make-scene", "Write the synthetic desk scene as a scene cache");
  ms->add_option("--out", o.out, "Output cache directory")->required();
  ms->add_option("--views", o.views_count, "Number of orbit views")->check(CLI::PositiveNumber);
  ms->add_option("--resolution", o.resolution, "Square image size in pixels")->check(CLI::Range(8, 4096));
  ms->add_option("--format", o.format, "Color storage: png8 or f32");

  auto* pb = app.add_subcommand("place-box", "Build a box from three clicks on a cached view");
  pb->add_option("--cache", o.cache, "Scene cache directory")->required();
  pb->add_option("--view", o.view, "View id the clicks refer to")->required();
  pb->add_option("--clicks", o.clicks, "u1,v1,u2,v2,u3,v3 in pixels")->required();
  pb->add_option("--ratios", o.ratios, "Size ratios rx,ry,rz");
  pb->add_option("--out", o.out, "Write the box record to this file");
  pb->add_flag("--json", o.json, "Print the full placement (corners and outlines per view)");

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_file, "key = value config file");
    sub->add_option("--set", o.overrides, "Override a config key (key=value), repeatable");
  };

  auto* tr = app.add_subcommand("train", "Optimize the object field; resumes from the run directory");
  tr->add_option("--cache", o.cache, "Scene cache directory")->required();
  tr->add_option("--box", o.box, "Box record");
  tr->add_option("--box-file", o.box_file, "File holding a box record");
  tr->add_option("--run-dir", o.run_dir, "Run directory (checkpoints, losses, previews)")->required();
  add_config(tr);

  auto* rd = app.add_subcommand("render", "Render composites of a trained field");
  rd->add_option("--cache", o.cache, "Scene cache directory")->required();
  rd->add_option("--field", o.field, "Field file (field.bin)")->required();
  rd->add_option("--out", o.out, "Output directory")->required();
  rd->add_option("--views", o.views, "Comma-separated view ids (default all)");
  rd->add_option("--K", o.K, "Samples per ray (default 192)");
  rd->add_option("--seed", o.seed, "Sampling seed");
  rd->add_option("--background", o.background, "scene, white or black");

  auto* ev = app.add_subcommand("eval", "Score box crops against the prompt and measure scene preservation");
  ev->add_option("--cache", o.cache, "Scene cache directory")->required();
  ev->add_option("--field", o.field, "Field file (field.bin)")->required();
  ev->add_option("--out", o.out, "Output directory")->required();
  ev->add_option("--scorer", o.scorer, "stub (constant), constant or none");
  ev->add_option("--constant-score", o.constant_score, "Value returned by the constant scorer");
  ev->add_option("--n-views", o.n_views, "Views to evaluate")->check(CLI::PositiveNumber);
  ev->add_option("--seed", o.seed, "View selection seed");
  ev->add_option("--K", o.K, "Samples per ray (default 192)");
  add_config(ev);

  auto* sv = app.add_subcommand("serve", "Run the local HTTP service");
  sv->add_option("--cache", o.cache, "Scene cache directory")->required();
  sv->add_option("--host", o.host, "Bind address");
  sv->add_option("--port", o.port, "Port (0 picks a free one)");
  sv->add_option("--jobs-dir", o.jobs_dir, "Directory for job runs");
  sv->add_option("--cors-origin", o.cors, "Allowed CORS origin");
  add_config(sv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*ms) return make_scene(o);
    if (*pb) return place_box(o);
    if (*tr) return train(o);
    if (*rd) return render(o);
    if (*ev) return eval(o);
    if (*sv) return serve(o);
  } catch (const ValidationError& e) {
    print_error("validation", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 2;
}
