#include "spse/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "spse/checkpoint.hpp"
#include "spse/config.hpp"
#include "spse/corpus.hpp"
#include "spse/errors.hpp"
#include "spse/metrics.hpp"
#include "spse/pipeline.hpp"

namespace spse::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

int exit_code_for_kind(const std::string& kind) {
  if (kind == "argument" || kind == "config" || kind == "vocabulary" || kind == "range" || kind == "usage") {
    return kUsage;
  }
  if (kind == "io" || kind == "format") return kInputError;
  return kFailure;
}

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

Checkpoint read_checkpoint(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path);
  return Checkpoint::read(path);
}

TagSet parse_tags(const std::string& text, const ConceptVocabulary& vocab) {
  TagSet tags;
  std::stringstream in(text);
  std::string tag;
  while (std::getline(in, tag, ',')) {
    if (tag.empty()) continue;
    vocab.index_of(tag);
    tags.insert(tag);
  }
  if (tags.empty()) throw ArgumentError("tag list is empty");
  return tags;
}

std::string rate_label(double r) {
  std::ostringstream s;
  s << "r_" << r;
  return s.str();
}

// Options shared by the commands that build an EditConfig.
struct RunOptions {
  std::string config_path;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  double fusion_rate = 0.0;
  CLI::Option* fusion_opt = nullptr;
  bool no_mve = false;
  bool single_embedding = false;
  bool no_target = false;
  bool no_detail = false;

  void add_config(CLI::App* sc) {
    sc->add_option("--config", config_path, "key = value run configuration");
    seed_opt = sc->add_option("--seed", seed, "overrides the config seed");
  }
  void add_ablations(CLI::App* sc) {
    fusion_opt = sc->add_option("--fusion-rate", fusion_rate, "overrides the config fusion rate");
    sc->add_flag("--no-mve", no_mve, "skip embedding optimisation and finetuning (e_o = e_t)");
    sc->add_flag("--single-embedding", single_embedding, "one shared embedding instead of four view bases");
    sc->add_flag("--no-target-enhance", no_target, "lambda_t = 0");
    sc->add_flag("--no-detail-enhance", no_detail, "lambda_d = 0");
  }

  EditConfig build() const {
    EditConfig c = config_path.empty() ? EditConfig{} : load_config(config_path);
    if (seed_opt && seed_opt->count() > 0) c.seed = seed;
    if (fusion_opt && fusion_opt->count() > 0) c.fusion_rate = fusion_rate;
    if (no_mve && single_embedding) throw ArgumentError("--no-mve and --single-embedding are exclusive");
    if (no_mve) c.embedding_mode = EmbeddingMode::kNone;
    if (single_embedding) c.embedding_mode = EmbeddingMode::kSingle;
    if (no_target) c.lambda_t_scale = 0.0;
    if (no_detail) c.lambda_d_scale = 0.0;
    c.validate();
    return c;
  }
};

struct TaskOptions {
  std::string task = "cube-to-sphere";
  std::string target_tags;

  void add(CLI::App* sc) {
    sc->add_option("--task", task, "edit task")->capture_default_str();
    sc->add_option("--target-tags", target_tags, "comma-separated tags overriding the task's target prompt");
  }

  EditTask build(const ConceptVocabulary& vocab, std::size_t grid_size) const {
    EditTask t = make_task(task, grid_size);
    if (!target_tags.empty()) t.target_tags = parse_tags(target_tags, vocab);
    return t;
  }
};

std::vector<MetricRecord> evaluate_edit(const VoxelScene& original, const VoxelScene& edited, const EditTask& task,
                                        const ConceptVocabulary& vocab, std::size_t image_size, std::size_t views,
                                        std::uint64_t seed) {
  const Tensor& d_orig = original.density().value();
  const Tensor& d_edit = edited.density().value();
  const ProbeEmbedder probe(image_size * image_size, vocab.dim(), seed);
  const ProbeEvaluation pe = evaluate_probe(original, edited, vocab.encode(task.target_tags),
                                            vocab.encode(task.original_tags), probe, image_size, views, seed);
  return {
      {"iou_target", voxel_iou(d_edit, task.target), 0, seed},
      {"iou_original", voxel_iou(d_edit, d_orig), 0, seed},
      {"edit_extent", edit_extent(d_orig, d_edit, task.target), 0, seed},
      {"density_mad", mean_abs_difference(d_edit, d_orig), 0, seed},
      {"clip_sim", pe.clip_sim, pe.views, seed},
      {"clip_dir", pe.clip_dir, pe.views - pe.skipped_dir, seed},
      {"mean_red", mean_covered_channel(edited, 0, image_size, views), views, seed},
      {"mean_green", mean_covered_channel(edited, 1, image_size, views), views, seed},
  };
}

std::string metric_lines(const std::vector<MetricRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json_line(r) + "\n";
  return out;
}

// Reconstruction loss over a fixed draw set, for before/after reports.
double fixed_loss(const Denoiser& denoiser, const std::vector<ViewImage>& views, const EmbeddingForView& embed,
                  const NoiseSchedule& schedule, std::uint64_t seed) {
  RngStream rng(seed);
  const auto draws = sample_draws(rng, 64, views.size(), schedule, views.front().image.shape());
  return reconstruction_loss(denoiser, views, embed, draws).value()[0];
}

constexpr std::uint64_t kReportDrawSeed = 777;

// ---- subcommands ----------------------------------------------------------

struct GenCorpus {
  std::string out;
  std::size_t count = 120;
  std::uint64_t seed = 1;
  CorpusOptions options;

  void add(CLI::App& app) {
    auto* sc = app.add_subcommand("gen-corpus", "generate the tagged synthetic corpus");
    sc->add_option("--out", out, "run directory")->required();
    sc->add_option("--count", count, "number of objects")->capture_default_str();
    sc->add_option("--seed", seed, "corpus seed")->capture_default_str();
    sc->add_option("--grid-size", options.grid_size)->capture_default_str();
    sc->add_option("--image-size", options.image_size)->capture_default_str();
    sc->add_option("--views", options.n_views, "views per object")->capture_default_str();
    sc->callback([this] { selected = true; });
  }
  bool selected = false;

  void run(std::ostream& os) const {
    const auto vocab = ConceptVocabulary::make_default();
    const auto corpus = generate_corpus(vocab, count, seed, options);
    ensure_dir(out);
    save_corpus(corpus, options).write(fs::path(out) / "corpus.spse");
    write_text(fs::path(out) / "manifest.jsonl", corpus_manifest(corpus));
    os << Json{{"corpus", (fs::path(out) / "corpus.spse").string()}, {"entries", corpus.size()}}.dump() << "\n";
  }
};

struct TrainPrior {
  std::string corpus_path;
  std::string out;
  PriorOptions options;
  bool selected = false;

  void add(CLI::App& app) {
    auto* sc = app.add_subcommand("train-prior", "train the intensity, depth and colour denoisers");
    sc->add_option("--corpus", corpus_path, "corpus.spse from gen-corpus")->required();
    sc->add_option("--out", out, "run directory")->required();
    sc->add_option("--steps", options.steps)->capture_default_str();
    sc->add_option("--batch", options.batch)->capture_default_str();
    sc->add_option("--lr", options.lr)->capture_default_str();
    sc->add_option("--seed", options.seed)->capture_default_str();
    sc->add_option("--condition-dropout", options.condition_dropout)->capture_default_str();
    sc->callback([this] { selected = true; });
  }

  void run(std::ostream& os) const {
    const auto vocab = ConceptVocabulary::make_default();
    const auto corpus = load_corpus(read_checkpoint(corpus_path, "corpus"), vocab);
    PriorOptions opts = options;
    opts.corpus_size = corpus.size();
    PriorReports reports;
    const PriorModels models = train_priors(corpus, opts, &reports);
    ensure_dir(out);
    save_priors(models).write(fs::path(out) / "prior.spse");
    std::ostringstream log;
    Json summary = Json::object();
    for (const auto& [name, rep] : {std::pair<const char*, const TrainReport*>{"intensity", &reports.intensity},
                                    {"depth", &reports.depth},
                                    {"color", &reports.color}}) {
      for (std::size_t i = 0; i < rep->losses.size(); ++i) {
        log << Json{{"model", name}, {"step", i}, {"loss", rep->losses[i]}}.dump() << "\n";
      }
      summary[name] = {{"first", rep->first_fraction_mean(0.1)}, {"last", rep->last_fraction_mean(0.1)}};
    }
    write_text(fs::path(out) / "train.jsonl", log.str());
    os << Json{{"prior", (fs::path(out) / "prior.spse").string()}, {"loss", summary}}.dump() << "\n";
  }
};

struct OptimizeMve {
  std::string prior_path;
  std::string out;
  std::string kind = "intensity";
  RunOptions run_opts;
  TaskOptions task_opts;
  bool selected = false;

  void add(CLI::App& app) {
    auto* sc = app.add_subcommand("optimize-mve", "capture the original object in view embeddings");
    sc->add_option("--prior", prior_path, "prior.spse from train-prior")->required();
    sc->add_option("--out", out, "run directory")->required();
    sc->add_option("--kind", kind, "intensity, depth or color")->capture_default_str();
    sc->add_flag("--single-embedding", run_opts.single_embedding, "one shared embedding instead of four view bases");
    run_opts.add_config(sc);
    task_opts.add(sc);
    sc->callback([this] { selected = true; });
  }

  void run(std::ostream& os) const {
    const PriorModels models = load_priors(read_checkpoint(prior_path, "prior"));
    const EditConfig config = run_opts.build();
    const EditTask task = task_opts.build(models.vocab, config.grid_size);
    const RenderKind rk = render_kind_from_string(kind);
    const VoxelScene original = make_scene(task.original, config.grid_size);
    const Tensor e_t = models.vocab.encode(task.target_tags);
    const Denoiser& prior = models.denoiser(rk);

    std::ostringstream log;
    const MultiViewEmbedding mve =
        capture_original(prior, rk, original, e_t, config.embedding_mode, models.schedule, config, config.seed,
                         [&](const StepRecord& r) { log << to_json_line(r) << "\n"; });

    const auto views = original_views(original, rk, CorpusOptions{}.n_views, config.image_size);
    const MultiViewEmbedding init(e_t);
    const double before = fixed_loss(
        prior, views, [&](double az) { return init.interpolate(az); }, models.schedule, kReportDrawSeed);
    const double after = fixed_loss(
        prior, views, [&](double az) { return mve.interpolate(az); }, models.schedule, kReportDrawSeed);

    Checkpoint ck;
    for (std::size_t i = 0; i < 4; ++i) ck.put("mve.base." + std::to_string(i), mve.base(i));
    ck.put("mve.kind", Tensor(Shape{1}, static_cast<double>(rk)));
    ck.put("target_embedding", e_t);
    put_scene(ck, original);
    ensure_dir(out);
    ck.write(fs::path(out) / "mve.spse");
    write_text(fs::path(out) / "embedding.jsonl", log.str());
    os << Json{{"mve", (fs::path(out) / "mve.spse").string()},
               {"kind", kind},
               {"loss_at_init", before},
               {"loss_optimized", after}}
              .dump()
       << "\n";
  }
};

struct Finetune {
  std::string prior_path;
  std::string mve_path;
  std::string out;
  RunOptions run_opts;
  bool selected = false;

  void add(CLI::App& app) {
    auto* sc = app.add_subcommand("finetune", "finetune a prior denoiser on the original with embeddings fixed");
    sc->add_option("--prior", prior_path, "prior.spse from train-prior")->required();
    sc->add_option("--mve", mve_path, "mve.spse from optimize-mve")->required();
    sc->add_option("--out", out, "run directory")->required();
    run_opts.add_config(sc);
    sc->callback([this] { selected = true; });
  }

  void run(std::ostream& os) const {
    const PriorModels models = load_priors(read_checkpoint(prior_path, "prior"));
    const Checkpoint mck = read_checkpoint(mve_path, "embedding checkpoint");
    const EditConfig config = run_opts.build();
    const double kind_code = mck.get("mve.kind")[0];
    if (kind_code != 0.0 && kind_code != 1.0 && kind_code != 2.0) throw FormatError("mve.kind is not a render kind");
    const auto rk = static_cast<RenderKind>(static_cast<int>(kind_code));
    MultiViewEmbedding mve(mck.get("mve.base.0"));
    for (std::size_t i = 1; i < 4; ++i) mve.bases()[i] = Var::constant(mck.get("mve.base." + std::to_string(i)));
    mve.set_trainable(false);
    const VoxelScene original = get_scene(mck);

    std::ostringstream log;
    const Denoiser& prior = models.denoiser(rk);
    const Denoiser tuned = finetune_for_original(prior, rk, original, mve, models.schedule, config, config.seed,
                                                 [&](const StepRecord& r) { log << to_json_line(r) << "\n"; });

    const auto views = original_views(original, rk, CorpusOptions{}.n_views, config.image_size);
    const EmbeddingForView embed = [&](double az) { return mve.interpolate(az); };
    const double before = fixed_loss(prior, views, embed, models.schedule, kReportDrawSeed);
    const double after = fixed_loss(tuned, views, embed, models.schedule, kReportDrawSeed);

    Checkpoint ck;
    put_denoiser(ck, denoiser_prefix(rk), tuned);
    for (const auto& [name, t] : mck.entries()) ck.put(name, t);
    ensure_dir(out);
    ck.write(fs::path(out) / "finetune.spse");
    write_text(fs::path(out) / "finetune.jsonl", log.str());
    os << Json{{"finetune", (fs::path(out) / "finetune.spse").string()},
               {"kind", to_string(rk)},
               {"loss_before", before},
               {"loss_after", after}}
              .dump()
       << "\n";
  }
};

struct Edit {
  std::string prior_path;
  std::string out;
  RunOptions run_opts;
  TaskOptions task_opts;
  bool selected = false;

  void add(CLI::App& app) {
    auto* sc = app.add_subcommand("edit", "full edit: embeddings, finetuning, geometry and texture stages");
    sc->add_option("--prior", prior_path, "prior.spse from train-prior")->required();
    sc->add_option("--out", out, "run directory")->required();
    run_opts.add_config(sc);
    run_opts.add_ablations(sc);
    task_opts.add(sc);
    sc->callback([this] { selected = true; });
  }

  void run(std::ostream& os, std::ostream& es) const {
    const PriorModels models = load_priors(read_checkpoint(prior_path, "prior"));
    const EditConfig config = run_opts.build();
    for (const auto& w : config.warnings()) es << Json{{"warning", w}}.dump() << "\n";
    const EditTask task = task_opts.build(models.vocab, config.grid_size);
    const VoxelScene original = make_scene(task.original, config.grid_size);
    const EditRun result = run_full_edit(original, task.target_tags, models, config);
    write_run(result, out);
    write_text(fs::path(out) / "config.txt", format_config(config));
    const auto metrics = evaluate_edit(original, result.edited, task, models.vocab, config.image_size, 8, config.seed);
    write_text(fs::path(out) / "eval.jsonl", metric_lines(metrics));
    Json summary{{"run", out}};
    for (const auto& m : metrics) summary[m.metric] = m.value;
    os << summary.dump() << "\n";
  }
};

struct Eval {
  std::string run_dir;
  std::string scene_path;
  std::string out;
  std::size_t views = 8;
  std::uint64_t seed = 0;
  std::size_t image_size = 16;
  TaskOptions task_opts;
  bool selected = false;

  void add(CLI::App& app) {
    auto* sc = app.add_subcommand("eval", "score an edited scene against its task");
    auto* run_opt = sc->add_option("--run", run_dir, "run directory from edit (uses texture.spse)");
    auto* scene_opt = sc->add_option("--scene", scene_path, "scene checkpoint");
    run_opt->excludes(scene_opt);
    sc->add_option("--out", out, "report file (default: <run>/eval.jsonl, or stdout only)");
    sc->add_option("--views", views)->capture_default_str();
    sc->add_option("--seed", seed, "probe seed")->capture_default_str();
    sc->add_option("--image-size", image_size)->capture_default_str();
    task_opts.add(sc);
    sc->callback([this] { selected = true; });
  }

  void run(std::ostream& os) const {
    if (run_dir.empty() && scene_path.empty()) throw ArgumentError("eval needs --run or --scene");
    fs::path path = scene_path;
    if (!run_dir.empty()) {
      path = fs::path(run_dir) / "texture.spse";
      if (!fs::exists(path)) path = fs::path(run_dir) / "geometry.spse";
    }
    const VoxelScene edited = get_scene(read_checkpoint(path.string(), "scene checkpoint"));
    const auto vocab = ConceptVocabulary::make_default();
    const EditTask task = task_opts.build(vocab, edited.grid_size());
    const VoxelScene original = make_scene(task.original, edited.grid_size());
    const std::string lines = metric_lines(evaluate_edit(original, edited, task, vocab, image_size, views, seed));
    if (!out.empty()) {
      write_text(out, lines);
    } else if (!run_dir.empty()) {
      write_text(fs::path(run_dir) / "eval.jsonl", lines);
    }
    os << lines;
  }
};

struct Render {
  std::string checkpoint;
  std::string prefix = "scene";
  std::string kind = "intensity";
  double view = 0.0;
  std::size_t image_size = 16;
  std::string out;
  bool selected = false;

  void add(CLI::App& app) {
    auto* sc = app.add_subcommand("render", "render a scene checkpoint to PGM/PPM");
    sc->add_option("--checkpoint", checkpoint, "container holding <prefix>.density and <prefix>.color")->required();
    sc->add_option("--prefix", prefix)->capture_default_str();
    sc->add_option("--view", view, "azimuth in degrees")->capture_default_str();
    sc->add_option("--kind", kind, "intensity, depth or color")->capture_default_str();
    sc->add_option("--image-size", image_size)->capture_default_str();
    sc->add_option("--out", out, "output image (.pgm for intensity/depth, .ppm for color)")->required();
    sc->callback([this] { selected = true; });
  }

  void run(std::ostream& os) const {
    const VoxelScene scene = get_scene(read_checkpoint(checkpoint, "checkpoint"), prefix);
    const RenderKind rk = render_kind_from_string(kind);
    const Tensor image = render_value(scene, rk, View(view, image_size));
    const fs::path path(out);
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    if (rk == RenderKind::kColor) {
      write_ppm(path, image);
    } else {
      write_pgm(path, image);
    }
    os << Json{{"image", out}, {"kind", kind}, {"view", View(view, image_size).azimuth}}.dump() << "\n";
  }
};

struct Sweep {
  std::string prior_path;
  std::string out;
  std::vector<double> rates{0.35, 0.6, 0.85};
  RunOptions run_opts;
  TaskOptions task_opts;
  bool selected = false;

  void add(CLI::App& app) {
    auto* sc = app.add_subcommand("sweep", "one edit per fusion rate plus a combined report");
    sc->add_option("--prior", prior_path, "prior.spse from train-prior")->required();
    sc->add_option("--out", out, "sweep directory")->required();
    sc->add_option("--fusion-rates", rates, "comma-separated rates")->delimiter(',')->capture_default_str();
    run_opts.add_config(sc);
    run_opts.add_ablations(sc);
    task_opts.add(sc);
    sc->callback([this] { selected = true; });
  }

  void run(std::ostream& os, std::ostream& es) const {
    if (run_opts.fusion_opt && run_opts.fusion_opt->count() > 0) {
      throw ArgumentError("sweep takes --fusion-rates, not --fusion-rate");
    }
    if (rates.empty()) throw ArgumentError("--fusion-rates is empty");
    const PriorModels models = load_priors(read_checkpoint(prior_path, "prior"));
    const EditConfig base = run_opts.build();
    const EditTask task = task_opts.build(models.vocab, base.grid_size);
    const VoxelScene original = make_scene(task.original, base.grid_size);
    ensure_dir(out);
    std::ostringstream report;
    for (const double r : rates) {
      EditConfig config = base;
      config.fusion_rate = r;
      config.validate();
      for (const auto& w : config.warnings()) es << Json{{"warning", w}}.dump() << "\n";
      const EditRun result = run_full_edit(original, task.target_tags, models, config);
      const fs::path dir = fs::path(out) / rate_label(r);
      write_run(result, dir);
      write_text(dir / "config.txt", format_config(config));
      const auto metrics =
          evaluate_edit(original, result.edited, task, models.vocab, config.image_size, 8, config.seed);
      write_text(dir / "eval.jsonl", metric_lines(metrics));
      Json line{{"fusion_rate", r}, {"run", rate_label(r)}};
      for (const auto& m : metrics) line[m.metric] = m.value;
      report << line.dump() << "\n";
      os << line.dump() << "\n";
    }
    write_text(fs::path(out) / "report.jsonl", report.str());
  }
};

void report_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << Json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Score projection sampling editor for voxel scenes", "spse"};
  app.require_subcommand(1, 1);
  GenCorpus gen_corpus;
  TrainPrior train_prior;
  OptimizeMve optimize_mve;
  Finetune finetune;
  Edit edit;
  Eval eval;
  Render render;
  Sweep sweep;
  gen_corpus.add(app);
  train_prior.add(app);
  optimize_mve.add(app);
  finetune.add(app);
  edit.add(app);
  eval.add(app);
  render.add(app);
  sweep.add(app);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what());
    return kUsage;
  }

  try {
    if (gen_corpus.selected) gen_corpus.run(out);
    if (train_prior.selected) train_prior.run(out);
    if (optimize_mve.selected) optimize_mve.run(out);
    if (finetune.selected) finetune.run(out);
    if (edit.selected) edit.run(out, err);
    if (eval.selected) eval.run(out);
    if (render.selected) render.run(out);
    if (sweep.selected) sweep.run(out, err);
  } catch (const Error& e) {
    report_error(err, e.kind(), e.what());
    return exit_code_for_kind(e.kind());
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
    return kFailure;
  }
  return kOk;
}

}  // namespace spse::cli
