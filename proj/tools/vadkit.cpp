// vadkit command-line driver.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "vadkit/checkpoint.hpp"
#include "vadkit/evaluate.hpp"
#include "vadkit/flow.hpp"
#include "vadkit/synth.hpp"
#include "vadkit/trainer.hpp"

using namespace vadkit;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed config " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Error("cannot write " + path.string());
}

struct SynthArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

void run_synth(const SynthArgs& a) {
  nlohmann::json j = a.spec.empty() ? nlohmann::json::object() : read_json(a.spec);
  if (a.seed) j["seed"] = *a.seed;
  const SynthSpec spec = synth_from_json(j);
  fs::create_directories(a.out);
  const AnnotationSet set = generate_synthetic(spec, a.out);
  write_json(fs::path(a.out) / "synth.json", synth_to_json(spec));
  std::printf("wrote %zu videos to %s\n", set.videos.size(), a.out.c_str());
}

struct FlowArgs {
  std::string root, backend = "reference", storage = "lossless", external_root;
};

void run_flow(const FlowArgs& a) {
  std::unique_ptr<FlowBackend> backend;
  if (a.backend == "reference")
    backend = std::make_unique<ReferenceFlowBackend>();
  else if (a.backend == "external")
    backend = std::make_unique<ExternalFlowBackend>(a.external_root.empty() ? a.root : a.external_root);
  else
    throw Error("unknown flow backend '" + a.backend + "' (expected reference or external)");
  const auto stats = precompute_flow(a.root, *backend, parse_flow_storage(a.storage));
  std::printf("flow: %zu videos, %zu frame pairs\n", stats.videos, stats.pairs);
}

struct TrainArgs {
  std::string config, root, out, method;
  std::optional<bool> gcn, flow;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  std::optional<double> lr;
  bool resume = false;
};

void run_train(const TrainArgs& a) {
  nlohmann::json j = nlohmann::json::object();
  if (!a.config.empty())
    j = read_json(a.config);
  else if (a.resume && fs::exists(fs::path(a.out) / "config.json"))
    j = read_json(fs::path(a.out) / "config.json");  // resume from the echoed config
  if (!a.method.empty()) j["method"] = a.method;
  if (a.gcn) j["gcn"] = *a.gcn;
  if (a.flow) j["flow"] = *a.flow;
  if (a.seed) j["seed"] = *a.seed;
  if (a.steps) j["steps"] = *a.steps;
  if (a.lr) j["learning_rate"] = *a.lr;
  const TrainConfig cfg = train_from_json(j);
  const auto res = train(cfg, a.root, a.out, a.resume);
  if (!res.losses.empty())
    std::printf("trained %zu steps, final loss %.6g\n", res.losses.size(), res.losses.back());
  std::printf("checkpoint %s\n", res.checkpoint.c_str());
}

struct ScoreArgs {
  std::string checkpoint, video, out;
};

void run_score(const ScoreArgs& a) {
  const AnomalyModel<float> model = load_model(a.checkpoint);
  const Video video = Video::open(a.video, model.config().flow);
  const ScoreSeries s = sliding_scores(video, model);
  write_score_csv(a.out, s, nullptr);
  std::printf("scored %zu frames of %s\n", s.raw.size(), s.video_id.c_str());
}

struct EvalArgs {
  std::string checkpoint, scorer, root, annotations, out, auc_mode = "concatenated";
};

void run_eval(const EvalArgs& a) {
  if (a.checkpoint.empty() == a.scorer.empty())
    throw Error("eval needs exactly one of --checkpoint or --scorer");
  const fs::path ann_path = a.annotations.empty() ? fs::path(a.root) / "annotations.json" : fs::path(a.annotations);
  const AnnotationSet ann = AnnotationSet::load(ann_path);
  const AucMode mode = parse_auc_mode(a.auc_mode);
  EvaluationReport rep;
  nlohmann::json echoed = {{"root", a.root}, {"annotations", ann_path.string()}, {"auc_mode", a.auc_mode}};
  if (!a.checkpoint.empty()) {
    const AnomalyModel<float> model = load_model(a.checkpoint);
    rep = evaluate_run(a.root, ann, model_scorer(model), model.config().flow, mode);
    echoed["checkpoint"] = a.checkpoint;
    echoed["model"] = model_to_json(model.config());
  } else {
    if (a.scorer != "oracle" && a.scorer != "anti-oracle")
      throw Error("unknown scorer '" + a.scorer + "' (expected oracle or anti-oracle)");
    rep = evaluate_run(a.root, ann, label_scorer(a.scorer == "anti-oracle"), false, mode);
    echoed["scorer"] = a.scorer;
  }
  if (!a.out.empty()) {
    const fs::path out(a.out);
    fs::create_directories(out / "scores");
    write_json(out / "config.json", echoed);
    write_json(out / "report.json", report_to_json(rep));
    for (const auto& v : rep.videos)
      write_score_csv(out / "scores" / (v.scores.video_id + ".csv"), v.scores, &v.labels);
  }
  std::printf("AUC %.3f\n", rep.auc);
  for (const auto& [cat, auc] : rep.by_category) std::printf("  %s %.3f\n", cat.c_str(), auc);
}

struct PlotArgs {
  std::string scores, annotations, video_id, out;
};

void run_plot(const PlotArgs& a) {
  ScoreSeries s = read_score_csv(a.scores);
  if (!a.video_id.empty()) s.video_id = a.video_id;
  std::vector<FrameRange> ranges;
  if (!a.annotations.empty()) {
    const TemporalAnnotation& ann = AnnotationSet::load(a.annotations).find(s.video_id);
    if (ann.n_frames != s.normalized.size())
      throw Error("score file has " + std::to_string(s.normalized.size()) + " frames, annotation of '" +
                  s.video_id + "' has " + std::to_string(ann.n_frames));
    ranges = ann.anomalous_ranges;
  }
  write_image(a.out, render_score_plot(s, ranges));
  std::printf("wrote %s\n", a.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vadkit: video anomaly detection experiments"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic sprite dataset");
  synth->add_option("--spec", sa.spec, "synthetic dataset spec (JSON)")->check(CLI::ExistingFile);
  synth->add_option("--out", sa.out, "output dataset root")->required();
  synth->add_option("--seed", sa.seed, "override the spec seed");

  FlowArgs fa;
  auto* flow = app.add_subcommand("flow", "precompute optical-flow sidecars");
  flow->add_option("--root", fa.root, "dataset root")->required()->check(CLI::ExistingDirectory);
  flow->add_option("--backend", fa.backend, "reference or external")->check(CLI::IsMember({"reference", "external"}));
  flow->add_option("--external-root", fa.external_root, "root of precomputed .flo files (default: --root)");
  flow->add_option("--storage", fa.storage, "lossless or jpeg")->check(CLI::IsMember({"lossless", "jpeg"}));

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", ta.config, "training config (JSON)")->check(CLI::ExistingFile);
  tr->add_option("--root", ta.root, "dataset root")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", ta.out, "output directory")->required();
  tr->add_option("--method", ta.method, "ocsvdd or recon")->check(CLI::IsMember({"ocsvdd", "recon"}));
  tr->add_flag("--gcn,!--no-gcn", ta.gcn, "enable the interaction branch");
  tr->add_flag("--flow,!--no-flow", ta.flow, "use RGB+flow input");
  tr->add_option("--seed", ta.seed);
  tr->add_option("--steps", ta.steps);
  tr->add_option("--lr", ta.lr, "learning rate");
  tr->add_flag("--resume", ta.resume, "continue from <out>/checkpoint.bin");

  ScoreArgs sc;
  auto* score = app.add_subcommand("score", "score every frame of one video");
  score->add_option("--checkpoint", sc.checkpoint)->required()->check(CLI::ExistingFile);
  score->add_option("--video", sc.video, "video directory")->required()->check(CLI::ExistingDirectory);
  score->add_option("--out", sc.out, "output CSV")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "frame-wise AUC over the test split");
  ev->add_option("--checkpoint", ea.checkpoint)->check(CLI::ExistingFile);
  ev->add_option("--scorer", ea.scorer, "oracle or anti-oracle (instead of a checkpoint)");
  ev->add_option("--root", ea.root, "dataset root")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--annotations", ea.annotations, "default: <root>/annotations.json");
  ev->add_option("--out", ea.out, "report directory");
  ev->add_option("--auc-mode", ea.auc_mode, "concatenated or per-video")
      ->check(CLI::IsMember({"concatenated", "per-video"}));

  PlotArgs pa;
  auto* plot = app.add_subcommand("plot", "render an anomaly-score curve");
  plot->add_option("--scores", pa.scores, "score CSV")->required()->check(CLI::ExistingFile);
  plot->add_option("--annotations", pa.annotations, "annotations.json for shading")->check(CLI::ExistingFile);
  plot->add_option("--video-id", pa.video_id, "default: the CSV file stem");
  plot->add_option("--out", pa.out, "output image (.png)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "vadkit: %s\n", e.what());
    return 2;
  }

  try {
    if (*synth) run_synth(sa);
    if (*flow) run_flow(fa);
    if (*tr) run_train(ta);
    if (*score) run_score(sc);
    if (*ev) run_eval(ea);
    if (*plot) run_plot(pa);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "vadkit: %s\n", e.what());
    return 1;
  }
  return 0;
}
