#pragma once

// Adaptation training: composes the detection loss with the pixel-level
// (NC), semantic-level (CDA), and image-level (IOR) terms, runs momentum
// SGD with the two-phase learning-rate schedule, evaluates target mAP per
// epoch, and drives the ablation grid.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fgrr/detector.hpp"
#include "fgrr/evaluation.hpp"
#include "fgrr/image_reweighting.hpp"
#include "fgrr/pixel_correspondence.hpp"
#include "fgrr/pixel_reasoning.hpp"
#include "fgrr/scene.hpp"
#include "fgrr/semantic_reasoning.hpp"

namespace fgrr {

struct TrainConfig {
  // Loss balance (paper defaults).
  double lambda1 = 0.1;  // L_NC
  double lambda2 = 0.1;  // L_CDA
  double lambda3 = 1.0;  // L_IOR

  // Optimizer schedule.
  double lr = 1e-3;
  double momentum = 0.9;
  double lr_decay = 0.1;  // applied from the halfway epoch on
  int epochs = 20;

  std::uint64_t seed = 1;

  // Module toggles.
  bool prr = true;
  bool srr = true;
  bool ior = true;

  // Pixel-level thresholds.
  double tau1 = 0.75;
  double tau2 = 0.5;

  // Semantic-level selection.
  int cdsr_k = 10;
  double keep_fraction = 0.2;
  double min_score = 0.8;
  double xi = 1.0;

  // Adversarial branch.
  double grl_eta = 1.0;
  int disc_hidden = 16;

  // Pseudo-label machinery activates after this fraction of total steps.
  double warmup_fraction = 0.2;

  DetectorConfig detector;

  // Dataset generation knobs (gen-data).
  DatasetLayout layout;
  std::string shift = "moderate";

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
      throw std::invalid_argument("TrainConfig: lambdas must be nonnegative");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
      throw std::invalid_argument("TrainConfig: warmup_fraction in [0, 1)");
  }
};

struct LossBundle {
  double det = 0.0;
  double nc = 0.0;
  double cda = 0.0;
  double ior = 0.0;
};

// L_det + lambda1 L_NC + lambda2 L_CDA + lambda3 L_IOR. Non-finite
// components abort with a diagnostic naming the component.
inline double total_loss(const LossBundle& b, const TrainConfig& cfg) {
  const std::pair<const char*, double> parts[] = {
      {"det", b.det}, {"nc", b.nc}, {"cda", b.cda}, {"ior", b.ior}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("total_loss: non-finite component: ") + name);
  return b.det + cfg.lambda1 * b.nc + cfg.lambda2 * b.cda + cfg.lambda3 * b.ior;
}

struct EpochStats {
  LossBundle losses;  // per-step means
  double total = 0.0;
  double target_map = 0.0;
};

struct RunReport {
  std::vector<EpochStats> history;
  double final_map = 0.0;
  double best_map = 0.0;
  bool diverged = false;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Model bundle
// ---------------------------------------------------------------------------

struct FgrrModel {
  DetectorParams detector;
  graph::EdgeScorerParams pix_edge;
  graph::GcnParams pix_gcn;
  graph::GatParams pix_gat_src, pix_gat_tgt;
  ClassifierParams pix_cls;
  graph::GcnParams sem_gcn;
  graph::GatParams sem_gat_src, sem_gat_tgt;
  DiscriminatorParams disc;

  static FgrrModel init(const TrainConfig& cfg, Rng& rng) {
    const DetectorConfig& d = cfg.detector;
    const int c2 = d.c2, k = d.num_classes, roi = d.roi_dim();
    return FgrrModel{
        DetectorParams::init(d, rng),
        graph::EdgeScorerParams::init(c2, rng, "pix_edge"),
        graph::GcnParams::init({c2, c2, c2}, rng, "pix_gcn"),
        graph::GatParams::init(c2, c2, rng, "pix_gat_s"),
        graph::GatParams::init(c2, c2, rng, "pix_gat_t"),
        ClassifierParams::init(c2, k, rng, "pix_cls"),
        graph::GcnParams::init({roi, roi, roi}, rng, "sem_gcn"),
        graph::GatParams::init(roi, roi, rng, "sem_gat_s"),
        graph::GatParams::init(roi, roi, rng, "sem_gat_t"),
        DiscriminatorParams::init(d.c3, cfg.disc_hidden, rng, "disc")};
  }

  std::vector<ag::Param*> detector_group() { return detector.all(); }

  std::vector<ag::Param*> prr_group() {
    return {&pix_edge.theta,    &pix_gcn.weights[0], &pix_gcn.weights[1],
            &pix_gat_src.weight, &pix_gat_src.attn,  &pix_gat_tgt.weight,
            &pix_gat_tgt.attn,   &pix_cls.weight,    &pix_cls.bias};
  }

  std::vector<ag::Param*> srr_group() {
    return {&sem_gcn.weights[0], &sem_gcn.weights[1], &sem_gat_src.weight,
            &sem_gat_src.attn,   &sem_gat_tgt.weight, &sem_gat_tgt.attn};
  }

  std::vector<ag::Param*> ior_group() {
    return {&disc.hidden_w, &disc.hidden_b, &disc.out_w, &disc.out_b};
  }

  std::vector<ag::Param*> all_params() {
    std::vector<ag::Param*> out = detector_group();
    for (auto* p : prr_group()) out.push_back(p);
    for (auto* p : srr_group()) out.push_back(p);
    for (auto* p : ior_group()) out.push_back(p);
    return out;
  }
};

// ---------------------------------------------------------------------------
// One adaptation step
// ---------------------------------------------------------------------------

struct StepOutcome {
  LossBundle losses;
  double total = 0.0;
};

namespace train_detail {

inline std::vector<std::pair<Box, int>> boxes_to_feature_coords(
    const std::vector<Box>& boxes, const std::vector<int>& labels, double stride) {
  std::vector<std::pair<Box, int>> out;
  for (std::size_t i = 0; i < boxes.size(); ++i)
    out.push_back({Box{boxes[i].x1 / stride, boxes[i].y1 / stride, boxes[i].x2 / stride,
                       boxes[i].y2 / stride},
                   labels[i]});
  return out;
}

// Source proposals that matched ground truth become semantic graph nodes.
struct SourceNodes {
  std::vector<int> rows;
  std::vector<int> labels;
  std::vector<Box> boxes;
};

inline SourceNodes source_semantic_nodes(const HeadsOut& heads, const std::vector<Box>& gt,
                                         const std::vector<int>& gt_labels) {
  SourceNodes n;
  const ProposalMatch m = match_proposals(heads.prop_boxes, gt, gt_labels);
  for (std::size_t r = 0; r < m.positives.size(); ++r) {
    n.rows.push_back(m.positives[r]);
    n.labels.push_back(gt_labels[static_cast<std::size_t>(m.matched_gt[r])]);
    n.boxes.push_back(heads.prop_boxes[static_cast<std::size_t>(m.positives[r])]);
  }
  return n;
}

}  // namespace train_detail

// Runs the full FGRR objective on one (source, target) scene pair and
// returns the loss bundle; gradients land on the bound parameters of `t`.
inline StepOutcome adaptation_step(ag::Tape& t, FgrrModel& model, const TrainConfig& cfg,
                                   const LoadedScene& src_scene, const LoadedScene& tgt_scene,
                                   bool pseudo_labels_active, ag::Var* total_out) {
  const DetectorConfig& dc = cfg.detector;
  DetectorVars det = bind(t, model.detector);

  ShallowOut shallow_s = backbone_shallow(t, src_scene.image, dc.image_size, det);
  ShallowOut shallow_t = backbone_shallow(t, tgt_scene.image, dc.image_size, det);

  // Pixel-level correspondence (shared by PRR and IOR weighting).
  PixelSet src_px, tgt_px;
  MatchedPairs pairs;
  std::map<int, Vector> src_centroids;
  const bool need_matching = (cfg.prr || cfg.ior) && pseudo_labels_active;
  if (need_matching) {
    const FeatureMap shallow_src_map(shallow_s.rows.value(), shallow_s.h, shallow_s.w,
                                     Stage::kShallow);
    const FeatureMap shallow_tgt_map(shallow_t.rows.value(), shallow_t.h, shallow_t.w,
                                     Stage::kShallow);
    const auto fm_boxes = train_detail::boxes_to_feature_coords(
        src_scene.boxes, src_scene.labels, dc.shallow_stride());
    src_px = select_source_foreground(shallow_src_map, fm_boxes, {cfg.tau1, cfg.tau2});
    std::tie(pairs, tgt_px) = mutual_nn_match(src_px, shallow_tgt_map);
    // Eq. 1 centroids over the in-box pixel sets (for the w1 weight).
    for (const auto& [cls, refs] : in_box_pixels(shallow_src_map, fm_boxes))
      src_centroids[cls] = class_centroids(shallow_src_map, refs).at(cls);
  }

  // PRR: bipartite reasoning over matched pixels, residual fusion.
  LossBundle losses;
  ag::Var nc_var = t.constant(Matrix::Zero(1, 1));
  ag::Var shallow_s_rows = shallow_s.rows;
  ag::Var shallow_t_rows = shallow_t.rows;
  if (cfg.prr && pseudo_labels_active && src_px.size() >= 1 && tgt_px.size() >= 1) {
    std::vector<int> src_idx, tgt_idx;
    for (const PixelRef& r : src_px.refs) src_idx.push_back(r.y * shallow_s.w + r.x);
    for (const PixelRef& r : tgt_px.refs) tgt_idx.push_back(r.y * shallow_t.w + r.x);
    ag::Var xs = ag::gather_rows(shallow_s.rows, src_idx);
    ag::Var xt = ag::gather_rows(shallow_t.rows, tgt_idx);
    auto bundle = build_pixel_graphs(src_px, tgt_px, pairs, xs, xt, t.bind(model.pix_edge.theta));
    auto out = pixel_reasoning_forward(bundle, graph::bind(t, model.pix_gcn),
                                       graph::bind(t, model.pix_gat_src),
                                       graph::bind(t, model.pix_gat_tgt),
                                       bind(t, model.pix_cls));
    nc_var = node_classification_loss(t, out.logits, bundle.labels);
    shallow_s_rows = fuse_back(shallow_s.rows, shallow_s.h, shallow_s.w, src_px,
                               ag::slice_rows(out.reasoned, 0, src_px.size()));
    shallow_t_rows = fuse_back(shallow_t.rows, shallow_t.h, shallow_t.w, tgt_px,
                               ag::slice_rows(out.reasoned, src_px.size(), tgt_px.size()));
  }

  DeepOut deep_s = backbone_deep(t, shallow_s_rows, shallow_s.h, shallow_s.w, det);
  DeepOut deep_t = backbone_deep(t, shallow_t_rows, shallow_t.h, shallow_t.w, det);
  HeadsOut heads_s = detector_heads(t, deep_s, det, dc, Domain::kSource);
  HeadsOut heads_t = detector_heads(t, deep_t, det, dc, Domain::kTarget);

  // Detection loss on the labeled source image: ROI-head loss plus the
  // anchor objectness term that trains the proposal scorer.
  ag::Var det_var = ag::add(
      detection_loss(t, heads_s.cls_logits, heads_s.reg, heads_s.prop_boxes, src_scene.boxes,
                     src_scene.labels),
      objectness_loss(t, heads_s.obj_logits, dc, deep_s.h, deep_s.w, src_scene.boxes));

  // SRR: semantic bipartite reasoning + category-aware alignment.
  ag::Var cda_var = t.constant(Matrix::Zero(1, 1));
  if (cfg.srr && pseudo_labels_active) {
    const auto src_nodes =
        train_detail::source_semantic_nodes(heads_s, src_scene.boxes, src_scene.labels);
    const PseudoSelection sel =
        select_pseudo_labeled_indices(heads_t.proposals, cfg.keep_fraction, cfg.min_score);
    if (!src_nodes.rows.empty() && !sel.indices.empty()) {
      ag::Var vs = ag::gather_rows(heads_s.roi_feats, src_nodes.rows);
      ag::Var vt = ag::gather_rows(heads_t.roi_feats, sel.indices);
      const Matrix adj = cdsr_adjacency(vs.value(), vt.value(), CdsrConfig{cfg.cdsr_k});
      ag::Var reasoned = semantic_bgcm_forward(vs, vt, adj, graph::bind(t, model.sem_gcn));

      ProposalSet src_props;
      src_props.domain = Domain::kSource;
      src_props.boxes = src_nodes.boxes;
      src_props.features = vs.value();
      ProposalSet tgt_props;
      tgt_props.domain = Domain::kTarget;
      for (int r : sel.indices)
        tgt_props.boxes.push_back(heads_t.proposals.boxes[static_cast<std::size_t>(r)]);
      tgt_props.features = vt.value();

      const double diag = std::sqrt(2.0) * dc.image_size;
      const int ns = static_cast<int>(src_nodes.rows.size());
      const int nt = static_cast<int>(sel.indices.size());
      ag::Var z_s = semantic_gam_forward(ag::slice_rows(reasoned, 0, ns),
                                         intra_semantic_adjacency(src_props, diag),
                                         graph::bind(t, model.sem_gat_src));
      ag::Var z_t = semantic_gam_forward(ag::slice_rows(reasoned, ns, nt),
                                         intra_semantic_adjacency(tgt_props, diag),
                                         graph::bind(t, model.sem_gat_tgt));
      std::vector<int> labels = src_nodes.labels;
      labels.insert(labels.end(), sel.labels.begin(), sel.labels.end());
      PrototypeTable table = class_prototypes(ag::concat_rows(z_s, z_t), labels, ns);
      table.xi = cfg.xi;
      cda_var = cda_loss(t, table);
    }
  }

  // IOR: reweighted adversarial loss on the pooled image features.
  ag::Var ior_var = t.constant(Matrix::Zero(1, 1));
  if (cfg.ior) {
    IorWeights w;
    if (pseudo_labels_active && !pairs.pairs.empty()) {
      std::map<int, Vector> tgt_sum;
      std::map<int, int> tgt_cnt;
      for (int i = 0; i < tgt_px.size(); ++i) {
        const int k = tgt_px.refs[static_cast<std::size_t>(i)].label;
        if (!tgt_sum.count(k)) tgt_sum[k] = Vector::Zero(tgt_px.features.cols());
        tgt_sum[k] += tgt_px.features.row(i).transpose();
        tgt_cnt[k] += 1;
      }
      std::map<int, std::pair<Vector, Vector>> shared;
      for (const auto& [k, sum] : tgt_sum) {
        auto it = src_centroids.find(k);
        if (it != src_centroids.end())
          shared.emplace(k, std::make_pair(it->second, (sum / tgt_cnt[k]).eval()));
      }
      w.w1 = compute_w1(shared);
      w.w2 = compute_w2(static_cast<int>(shared.size()), dc.num_classes);
    }
    ior_var = ior_loss(t, deep_s.global, deep_t.global, bind(t, model.disc), w, cfg.grl_eta);
  }

  losses.det = det_var.scalar();
  losses.nc = nc_var.scalar();
  losses.cda = cda_var.scalar();
  losses.ior = ior_var.scalar();

  ag::Var total = ag::add(
      ag::add(det_var, ag::scale(nc_var, cfg.lambda1)),
      ag::add(ag::scale(cda_var, cfg.lambda2), ag::scale(ior_var, cfg.lambda3)));
  if (total_out) *total_out = total;

  StepOutcome out;
  out.losses = losses;
  out.total = total_loss(losses, cfg);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

class SgdOptimizer {
 public:
  SgdOptimizer(FgrrModel& model, const TrainConfig& cfg) : cfg_(cfg) {
    auto mark = [&](const std::vector<ag::Param*>& group, bool active) {
      for (ag::Param* p : group) active_[p] = active;
    };
    mark(model.detector_group(), true);
    mark(model.prr_group(), cfg.prr);
    mark(model.srr_group(), cfg.srr);
    mark(model.ior_group(), cfg.ior);
  }

  void step(ag::Tape& t, double lr) {
    for (const auto& [param, node] : t.bound_params()) {
      auto it = active_.find(param);
      if (it == active_.end() || !it->second) continue;
      if (!t.grad_touched(node)) continue;
      const Matrix& g = t.grad(node);
      param->velocity = cfg_.momentum * param->velocity + g;
      param->value -= lr * param->velocity;
    }
  }

 private:
  TrainConfig cfg_;
  std::map<ag::Param*, bool> active_;
};

// ---------------------------------------------------------------------------
// Evaluation over a split
// ---------------------------------------------------------------------------

inline double evaluate_target_map(FgrrModel& model, const TrainConfig& cfg,
                                  const std::vector<LoadedScene>& scenes,
                                  double iou_threshold = 0.5) {
  std::vector<ImageEval> evals;
  for (const LoadedScene& s : scenes) {
    ag::Tape t;
    DetectorForward f = detector_forward(t, s.image, cfg.detector.image_size, model.detector,
                                         s.domain);
    ImageEval ev;
    ev.detections = extract_detections(f.heads, cfg.detector);
    ev.gt_boxes = s.boxes;
    ev.gt_labels = s.labels;
    evals.push_back(std::move(ev));
  }
  return evaluate_map(evals, iou_threshold);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

// The per-epoch pairing schedule, exposed so the source-only reference loop
// in the tests can replay it exactly.
inline std::vector<std::pair<int, int>> epoch_pairs(std::uint64_t seed, int epoch,
                                                    int n_source, int n_target) {
  Rng rng(seed * 2654435761ull + static_cast<std::uint64_t>(epoch) * 97003ull + 11ull);
  std::vector<int> src(static_cast<std::size_t>(n_source));
  std::vector<int> tgt(static_cast<std::size_t>(n_target));
  std::iota(src.begin(), src.end(), 0);
  std::iota(tgt.begin(), tgt.end(), 0);
  rng.shuffle(src);
  rng.shuffle(tgt);
  const int steps = std::min(n_source, n_target);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < steps; ++i)
    pairs.emplace_back(src[static_cast<std::size_t>(i)], tgt[static_cast<std::size_t>(i)]);
  return pairs;
}

struct Dataset {
  std::vector<LoadedScene> source_train, target_train, source_val, target_val;
};

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset d;
  d.source_train = import_split((fs::path(dir) / "source_train").string());
  d.target_train = import_split((fs::path(dir) / "target_train").string());
  if (fs::exists(fs::path(dir) / "source_val"))
    d.source_val = import_split((fs::path(dir) / "source_val").string());
  d.target_val = import_split((fs::path(dir) / "target_val").string());
  if (d.source_train.empty() || d.target_train.empty() || d.target_val.empty())
    throw std::runtime_error("load_dataset: missing or empty splits under " + dir);
  return d;
}

constexpr double kDivergenceAbort = 1e6;

inline RunReport train_on(FgrrModel& model, const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  RunReport report;
  report.seed = cfg.seed;
  SgdOptimizer opt(model, cfg);

  const int steps_per_epoch = static_cast<int>(
      std::min(data.source_train.size(), data.target_train.size()));
  const int total_steps = steps_per_epoch * cfg.epochs;
  const int warmup_steps = static_cast<int>(std::ceil(cfg.warmup_fraction * total_steps));

  int global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs && !report.diverged; ++epoch) {
    const double lr = epoch >= cfg.epochs / 2 ? cfg.lr * cfg.lr_decay : cfg.lr;
    EpochStats stats;
    const auto schedule = epoch_pairs(cfg.seed, epoch, static_cast<int>(data.source_train.size()),
                                      static_cast<int>(data.target_train.size()));
    for (const auto& [si, ti] : schedule) {
      ag::Tape tape;
      ag::Var total;
      const bool active = global_step >= warmup_steps;
      const StepOutcome out =
          adaptation_step(tape, model, cfg, data.source_train[static_cast<std::size_t>(si)],
                          data.target_train[static_cast<std::size_t>(ti)], active, &total);
      if (out.total > kDivergenceAbort) {
        report.diverged = true;
        break;
      }
      tape.backward(total);
      opt.step(tape, lr);
      stats.losses.det += out.losses.det;
      stats.losses.nc += out.losses.nc;
      stats.losses.cda += out.losses.cda;
      stats.losses.ior += out.losses.ior;
      stats.total += out.total;
      ++global_step;
    }
    const double inv = 1.0 / schedule.size();
    stats.losses.det *= inv;
    stats.losses.nc *= inv;
    stats.losses.cda *= inv;
    stats.losses.ior *= inv;
    stats.total *= inv;
    stats.target_map = evaluate_target_map(model, cfg, data.target_val);
    report.history.push_back(stats);
    report.best_map = std::max(report.best_map, stats.target_map);
  }
  if (!report.history.empty()) report.final_map = report.history.back().target_map;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

struct AblationVariant {
  std::string name;
  bool prr = true, srr = true, ior = true;
};

inline AblationVariant named_variant(const std::string& name) {
  if (name == "full") return {"full", true, true, true};
  if (name == "no_prr") return {"no_prr", false, true, true};
  if (name == "no_srr") return {"no_srr", true, false, true};
  if (name == "no_ior") return {"no_ior", true, true, false};
  if (name == "source_only") return {"source_only", false, false, false};
  throw std::invalid_argument("unknown ablation variant: " + name);
}

struct AblationRow {
  std::string variant;
  std::vector<double> final_maps;  // one per seed, input order
  double median = 0.0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Runs |variants| x |seeds| trainings (each fully independent and
// deterministic); rows follow the input variant order.
inline std::vector<AblationRow> ablate(const TrainConfig& base,
                                       const std::vector<AblationVariant>& variants,
                                       const std::vector<std::uint64_t>& seeds,
                                       const Dataset& data, int workers = 2) {
  if (variants.empty()) throw std::invalid_argument("ablate: need at least one variant");
  struct Job {
    int variant_idx;
    int seed_idx;
  };
  std::vector<Job> jobs;
  for (int v = 0; v < static_cast<int>(variants.size()); ++v)
    for (int s = 0; s < static_cast<int>(seeds.size()); ++s) jobs.push_back({v, s});

  std::vector<AblationRow> rows(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    rows[v].variant = variants[v].name;
    rows[v].final_maps.assign(seeds.size(), 0.0);
  }

  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&]() {
    for (;;) {
      Job job;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= jobs.size()) return;
        job = jobs[next++];
      }
      TrainConfig cfg = base;
      const AblationVariant& var = variants[static_cast<std::size_t>(job.variant_idx)];
      cfg.prr = var.prr;
      cfg.srr = var.srr;
      cfg.ior = var.ior;
      cfg.seed = seeds[static_cast<std::size_t>(job.seed_idx)];
      Rng rng(cfg.seed);
      FgrrModel model = FgrrModel::init(cfg, rng);
      const RunReport rep = train_on(model, cfg, data);
      {
        std::lock_guard<std::mutex> lock(mu);
        rows[static_cast<std::size_t>(job.variant_idx)]
            .final_maps[static_cast<std::size_t>(job.seed_idx)] = rep.final_map;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < std::max(1, workers); ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (auto& row : rows) row.median = median_of(row.final_maps);
  return rows;
}

}  // namespace fgrr
