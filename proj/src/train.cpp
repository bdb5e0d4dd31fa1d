#include "pianolab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "pianolab/io.hpp"

namespace pianolab::train {

using nlohmann::json;

void TrainConfig::validate() const {
  representation.validate();
  optimizer.validate();
  schedule.validate();
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0,1)");
  if (l1 < 0 || l2 < 0) throw ConfigError("penalties must be >= 0");
}

std::string to_json_string(const TrainConfig& cfg) {
  json j;
  j["representation"] = json::parse(dsp::to_json_string(cfg.representation));
  j["model"] = {{"kind", zoo::to_string(cfg.model.kind)},
                {"input_bins", cfg.model.input_bins},
                {"context_frames", cfg.model.context_frames},
                {"shallow_width", cfg.model.shallow_width}};
  j["optimizer"] = {{"kind", opt::to_string(cfg.optimizer.kind)},
                    {"learning_rate", cfg.optimizer.learning_rate},
                    {"momentum", cfg.optimizer.momentum},
                    {"beta1", cfg.optimizer.beta1},
                    {"beta2", cfg.optimizer.beta2},
                    {"eps_adam", cfg.optimizer.eps_adam}};
  j["schedule"] = {{"kind", cfg.schedule.kind == opt::ScheduleKind::constant ? "constant"
                                                                             : "step_multiply"},
                   {"factor", cfg.schedule.factor},
                   {"period", cfg.schedule.period}};
  j["train"] = {{"epochs", cfg.epochs},       {"batch_size", cfg.batch_size},
                {"dropout", cfg.dropout},     {"batch_norm", cfg.batch_norm},
                {"l1", cfg.l1},               {"l2", cfg.l2},
                {"seed", cfg.seed}};
  return j.dump(2);
}

TrainConfig train_config_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid run config: ") + e.what());
  }
  TrainConfig cfg;
  try {
    if (j.contains("representation"))
      cfg.representation = dsp::spec_config_from_json_string(j["representation"].dump());
    if (j.contains("model")) {
      const auto& m = j["model"];
      if (m.contains("kind")) cfg.model.kind = zoo::model_kind_from_string(m["kind"]);
      if (m.contains("input_bins")) cfg.model.input_bins = m["input_bins"];
      if (m.contains("context_frames")) cfg.model.context_frames = m["context_frames"];
      if (m.contains("shallow_width")) cfg.model.shallow_width = m["shallow_width"];
    }
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      if (o.contains("kind")) cfg.optimizer.kind = opt::optimizer_kind_from_string(o["kind"]);
      if (o.contains("learning_rate")) cfg.optimizer.learning_rate = o["learning_rate"];
      if (o.contains("momentum")) cfg.optimizer.momentum = o["momentum"];
      if (o.contains("beta1")) cfg.optimizer.beta1 = o["beta1"];
      if (o.contains("beta2")) cfg.optimizer.beta2 = o["beta2"];
      if (o.contains("eps_adam")) cfg.optimizer.eps_adam = o["eps_adam"];
    }
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      if (s.contains("kind"))
        cfg.schedule.kind = s["kind"] == "constant" ? opt::ScheduleKind::constant
                                                    : opt::ScheduleKind::step_multiply;
      if (s.contains("factor")) cfg.schedule.factor = s["factor"];
      if (s.contains("period")) cfg.schedule.period = s["period"];
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      if (t.contains("epochs")) cfg.epochs = t["epochs"];
      if (t.contains("batch_size")) cfg.batch_size = t["batch_size"];
      if (t.contains("dropout")) cfg.dropout = t["dropout"];
      if (t.contains("batch_norm")) cfg.batch_norm = t["batch_norm"];
      if (t.contains("l1")) cfg.l1 = t["l1"];
      if (t.contains("l2")) cfg.l2 = t["l2"];
      if (t.contains("seed")) cfg.seed = t["seed"];
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad run-config field: ") + e.what());
  }
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  return train_config_from_json_string(io::read_file(path));
}

std::string config_hash(const TrainConfig& cfg) { return io::hash_hex(to_json_string(cfg)); }

namespace {

json metrics_to_json(const EpochMetrics& m) {
  return {{"P", m.precision}, {"R", m.recall}, {"F1", m.f1}};
}

EpochMetrics metrics_from_json(const json& j) {
  EpochMetrics m;
  m.precision = j.value("P", 0.0);
  m.recall = j.value("R", 0.0);
  m.f1 = j.value("F1", 0.0);
  return m;
}

}  // namespace

std::string RunRecord::to_json() const {
  json j;
  j["train_loss"] = train_loss;
  j["lr_trace"] = lr_trace;
  j["val_curve"] = json::array();
  for (const auto& m : val_curve) j["val_curve"].push_back(metrics_to_json(m));
  j["init_valid"] = metrics_to_json(init_valid);
  j["best_epoch"] = best_epoch;
  j["best_f1"] = best_f1;
  j["final_train"] = metrics_to_json(final_train);
  j["final_valid"] = metrics_to_json(final_valid);
  j["failed"] = failed;
  j["fail_step"] = fail_step;
  j["fail_reason"] = fail_reason;
  j["wall_seconds"] = wall_seconds;
  j["checkpoint_path"] = checkpoint_path;
  return j.dump(2);
}

RunRecord RunRecord::from_json(const std::string& text) {
  const json j = json::parse(text);
  RunRecord r;
  r.train_loss = j.value("train_loss", std::vector<double>{});
  r.lr_trace = j.value("lr_trace", std::vector<double>{});
  if (j.contains("val_curve"))
    for (const auto& m : j["val_curve"]) r.val_curve.push_back(metrics_from_json(m));
  if (j.contains("init_valid")) r.init_valid = metrics_from_json(j["init_valid"]);
  r.best_epoch = j.value("best_epoch", -1);
  r.best_f1 = j.value("best_f1", 0.0);
  if (j.contains("final_train")) r.final_train = metrics_from_json(j["final_train"]);
  if (j.contains("final_valid")) r.final_valid = metrics_from_json(j["final_valid"]);
  r.failed = j.value("failed", false);
  r.fail_step = j.value("fail_step", static_cast<std::int64_t>(-1));
  r.fail_reason = j.value("fail_reason", "");
  r.wall_seconds = j.value("wall_seconds", 0.0);
  r.checkpoint_path = j.value("checkpoint_path", "");
  return r;
}

void save_run_record(const std::filesystem::path& dir, const RunRecord& rec) {
  std::filesystem::create_directories(dir);
  io::atomic_write_file(dir / "run.json", rec.to_json());
  std::ostringstream csv;
  csv.precision(10);
  csv << "epoch,train_loss,val_P,val_R,val_F1,lr\n";
  for (std::size_t e = 0; e < rec.train_loss.size(); ++e) {
    csv << e << ',' << rec.train_loss[e] << ',' << rec.val_curve[e].precision << ','
        << rec.val_curve[e].recall << ',' << rec.val_curve[e].f1 << ',' << rec.lr_trace[e]
        << "\n";
  }
  io::atomic_write_file(dir / "curves.csv", csv.str());
}

namespace {

struct TrainerState {
  nn::Network net;
  opt::OptimizerState opt_state;
  nn::Rng rng;
  int epoch_next = 0;
  double initial_loss = -1.0;
  RunRecord record;
  std::vector<nn::Tensor> best_params;  // snapshot of the best-F1 epoch
};

std::vector<nn::Tensor> snapshot_params(const nn::Network& net) {
  std::vector<nn::Tensor> out;
  for (const auto& p : net.params)
    for (const nn::Tensor* t : {&p.W, &p.b, &p.gamma, &p.beta, &p.run_mean, &p.run_var})
      out.push_back(*t);
  return out;
}

void restore_params(nn::Network& net, const std::vector<nn::Tensor>& snap) {
  std::size_t i = 0;
  for (auto& p : net.params)
    for (nn::Tensor* t : {&p.W, &p.b, &p.gamma, &p.beta, &p.run_mean, &p.run_var})
      *t = snap[i++];
}

std::string rng_to_string(const nn::Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

void rng_from_string(nn::Rng& rng, const std::string& s) {
  std::istringstream ss(s);
  ss >> rng;
  if (!ss) throw ParseError("checkpoint: bad rng state");
}

EpochMetrics evaluate_set(nn::Network& net, const std::vector<data::AlignedTrack>& tracks,
                          std::size_t context) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const data::AlignedTrack& track : tracks) {
    const Matrix pred = predict_track(net, track, context);
    const Matrix bin = eval::threshold(pred);
    for (std::size_t i = 0; i < bin.v.size(); ++i) {
      const bool p = bin.v[i] != 0.0;
      const bool t = track.y.v[i] != 0.0;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
  }
  EpochMetrics m;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

nn::Network build_model(const TrainConfig& cfg, std::size_t bins) {
  zoo::ModelClass mc = cfg.model;
  if (mc.input_bins == 0) mc.input_bins = bins;
  if (mc.input_bins != bins)
    throw ConfigError("model expects " + std::to_string(mc.input_bins) +
                      " input bins but the data has " + std::to_string(bins));
  zoo::ProbeOptions probe;
  probe.dropout = cfg.dropout;
  probe.batch_norm = cfg.batch_norm;
  return zoo::build(mc, probe);
}

void save_trainer_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg,
                             const TrainerState& st) {
  nn::Checkpoint ckpt;
  ckpt.net = st.net;
  ckpt.spec_config_hash = dsp::config_hash(cfg.representation);
  json meta;
  meta["epoch_next"] = st.epoch_next;
  meta["step_count"] = st.opt_state.step_count;
  meta["initial_loss"] = st.initial_loss;
  meta["rng"] = rng_to_string(st.rng);
  meta["record"] = json::parse(st.record.to_json());
  meta["train_config"] = json::parse(to_json_string(cfg));
  meta["model_kind"] = zoo::to_string(cfg.model.kind);
  ckpt.meta_json = meta.dump();
  for (std::size_t i = 0; i < st.opt_state.slot_a.size(); ++i)
    ckpt.extra.emplace_back("opt_a_" + std::to_string(i), st.opt_state.slot_a[i]);
  for (std::size_t i = 0; i < st.opt_state.slot_b.size(); ++i)
    ckpt.extra.emplace_back("opt_b_" + std::to_string(i), st.opt_state.slot_b[i]);
  for (std::size_t i = 0; i < st.best_params.size(); ++i)
    ckpt.extra.emplace_back("best_" + std::to_string(i), st.best_params[i]);
  nn::save_checkpoint(path, ckpt);
}

TrainerState load_trainer_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg) {
  nn::Checkpoint ckpt = nn::load_checkpoint(path);
  TrainerState st;
  st.net = std::move(ckpt.net);
  const json meta = json::parse(ckpt.meta_json);
  st.epoch_next = meta.at("epoch_next");
  st.initial_loss = meta.at("initial_loss");
  rng_from_string(st.rng, meta.at("rng"));
  st.record = RunRecord::from_json(meta.at("record").dump());
  st.opt_state = opt::make_state(st.net, cfg.optimizer);
  st.opt_state.step_count = meta.at("step_count");
  std::size_t na = 0, nb = 0;
  for (auto& [name, t] : ckpt.extra) {
    if (name.rfind("opt_a_", 0) == 0)
      st.opt_state.slot_a[na++] = std::move(t);
    else if (name.rfind("opt_b_", 0) == 0)
      st.opt_state.slot_b[nb++] = std::move(t);
    else if (name.rfind("best_", 0) == 0)
      st.best_params.push_back(std::move(t));
  }
  return st;
}

}  // namespace

Matrix predict_track(nn::Network& net, const data::AlignedTrack& track,
                     std::size_t context_frames) {
  std::vector<data::AlignedTrack> one;
  one.push_back(track);
  const auto chunks = data::full_set_chunks(one, context_frames, 512);
  Matrix pred(track.x.rows, 88);
  std::size_t row = 0;
  for (const data::Batch& chunk : chunks) {
    const nn::Tensor out = nn::forward(net, chunk.x, nn::Mode::eval);
    for (std::size_t r = 0; r < out.shape[0]; ++r, ++row)
      std::copy(out.v.begin() + static_cast<long>(r * 88),
                out.v.begin() + static_cast<long>((r + 1) * 88), pred.row(row));
  }
  return pred;
}

RunRecord train_run(const TrainConfig& cfg, const std::vector<data::AlignedTrack>& train_tracks,
                    const std::vector<data::AlignedTrack>& valid_tracks,
                    const TrainOptions& opts) {
  cfg.validate();
  if (train_tracks.empty()) throw ConfigError("train: no training tracks");
  const auto t_start = std::chrono::steady_clock::now();

  const std::size_t bins = train_tracks.front().x.cols;
  const std::size_t context = cfg.model.is_conv() ? cfg.model.context_frames : 1;

  TrainerState st;
  if (opts.resume_from) {
    st = load_trainer_checkpoint(*opts.resume_from, cfg);
  } else {
    st.net = build_model(cfg, bins);
    nn::init_params(st.net, cfg.seed);
    st.opt_state = opt::make_state(st.net, cfg.optimizer);
    st.rng.seed(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    st.record.init_valid = evaluate_set(st.net, valid_tracks.empty() ? train_tracks : valid_tracks,
                                        context);
  }
  RunRecord& rec = st.record;
  const std::vector<data::AlignedTrack>& vset =
      valid_tracks.empty() ? train_tracks : valid_tracks;

  try {
    for (int epoch = st.epoch_next; epoch < cfg.epochs; ++epoch) {
      const double lr = opt::schedule_lr(cfg.optimizer.learning_rate, epoch, cfg.schedule);
      opt::OptimizerConfig ocfg = cfg.optimizer;
      ocfg.learning_rate = lr;

      data::BatchIterator batches(train_tracks, context, cfg.batch_size, st.rng());
      double loss_sum = 0.0;
      std::size_t frames = 0;
      data::Batch batch;
      while (batches.next(batch)) {
        nn::ForwardCache cache;
        const nn::Tensor out = nn::forward(st.net, batch.x, nn::Mode::train, &cache, &st.rng);
        const double loss = nn::bce_loss(out, batch.y) + nn::penalty(st.net, cfg.l1, cfg.l2);
        if (st.initial_loss < 0) st.initial_loss = std::max(loss, 1e-12);
        if (!std::isfinite(loss) || loss > opts.divergence_factor * st.initial_loss)
          throw DivergenceError("loss " + std::to_string(loss) + " at step " +
                                    std::to_string(st.opt_state.step_count),
                                st.opt_state.step_count);
        const nn::Tensor lgrad = nn::bce_loss_grad(out, batch.y);
        const nn::GradientSet grads = nn::backward(st.net, cache, lgrad, cfg.l1, cfg.l2);
        opt::step(st.net, grads, st.opt_state, ocfg);
        loss_sum += loss * static_cast<double>(batch.y.shape[0]);
        frames += batch.y.shape[0];
      }

      rec.train_loss.push_back(frames ? loss_sum / static_cast<double>(frames) : 0.0);
      rec.lr_trace.push_back(lr);
      const EpochMetrics vm = evaluate_set(st.net, vset, context);
      rec.val_curve.push_back(vm);
      if (vm.f1 > rec.best_f1 || rec.best_epoch < 0) {
        rec.best_f1 = vm.f1;
        rec.best_epoch = epoch;
        st.best_params = snapshot_params(st.net);
      }
      st.epoch_next = epoch + 1;
      if (opts.checkpoint_path) save_trainer_checkpoint(*opts.checkpoint_path, cfg, st);
    }

    if (!st.best_params.empty()) restore_params(st.net, st.best_params);
    const auto chunks = data::full_set_chunks(train_tracks, context, 512);
    std::vector<nn::Tensor> inputs;
    for (const data::Batch& c : chunks) inputs.push_back(c.x);
    nn::batchnorm_finalize(st.net, inputs);
    rec.final_train = evaluate_set(st.net, train_tracks, context);
    rec.final_valid = evaluate_set(st.net, vset, context);
    if (opts.checkpoint_path) {
      st.best_params = snapshot_params(st.net);
      save_trainer_checkpoint(*opts.checkpoint_path, cfg, st);
      rec.checkpoint_path = opts.checkpoint_path->string();
    }
  } catch (const DivergenceError& e) {
    rec.failed = true;
    rec.fail_step = e.step_index;
    rec.fail_reason = e.what();
  }

  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return rec;
}

double lr_search(const std::vector<double>& candidates,
                 const std::function<bool(double)>& diverges) {
  if (candidates.empty()) throw ConfigError("lr_search: no candidates");
  for (double alpha : candidates)
    if (!diverges(alpha)) return alpha;
  throw ConfigError("lr_search: every candidate diverged");
}

double lr_search(const TrainConfig& cfg_template,
                 const std::vector<data::AlignedTrack>& train_tracks, int probe_epochs) {
  if (probe_epochs < 1) throw ConfigError("lr_search: probe budget must be >= 1 epoch");
  const std::vector<double> decades = {10.0, 1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5};
  return lr_search(decades, [&](double alpha) {
    TrainConfig probe = cfg_template;
    probe.optimizer.learning_rate = alpha;
    probe.epochs = probe_epochs;
    const RunRecord rec = train_run(probe, train_tracks, train_tracks);
    return rec.failed;
  });
}

}  // namespace pianolab::train
