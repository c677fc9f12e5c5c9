#pragma once

// Multitask training. One shared encoder feeds per-task linear heads; a
// round-robin loop draws one batch per task per iteration, in registration
// order, until the largest task's epoch completes. Each update touches the
// encoder and the drawing task's head only, so heads never perturb each
// other. A proportional schedule is available as an alternative: it draws
// the same number of batches per outer loop but picks the task for each
// draw with probability proportional to its training size.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mtenc/common.hpp"
#include "mtenc/data.hpp"
#include "mtenc/encoder.hpp"
#include "mtenc/heads.hpp"
#include "mtenc/metrics.hpp"
#include "mtenc/tape.hpp"
#include "mtenc/tensor.hpp"
#include "mtenc/tokenizer.hpp"

namespace mtenc {

// ----------------------------------------------------------- configuration

enum class Optimizer { sgd, adam };
enum class Schedule { round_robin, proportional, single_task };

inline const char* optimizer_name(Optimizer o) {
    return o == Optimizer::sgd ? "sgd" : "adam";
}

inline Optimizer optimizer_from(const std::string& s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adam") return Optimizer::adam;
    throw ConfigError("unknown optimizer " + s);
}

inline const char* schedule_name(Schedule s) {
    switch (s) {
        case Schedule::round_robin: return "round_robin";
        case Schedule::proportional: return "proportional";
        case Schedule::single_task: return "single_task";
    }
    return "?";
}

inline Schedule schedule_from(const std::string& s) {
    if (s == "round_robin") return Schedule::round_robin;
    if (s == "proportional") return Schedule::proportional;
    if (s == "single_task") return Schedule::single_task;
    throw ConfigError("unknown schedule " + s);
}

struct TrainerConfig {
    Optimizer optimizer = Optimizer::sgd;
    double alpha = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    Schedule schedule = Schedule::round_robin;
    int outer_loops = 1;
    uint64_t seed = 0;
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};  // per-task fine-tune search
    int epochs = 20;                                // per-task fine-tune search

    void validate() const {
        if (!(alpha > 0.0)) throw ConfigError("trainer: alpha must be positive");
        if (outer_loops < 1) throw ConfigError("trainer: outer_loops must be at least 1");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("trainer: betas must lie in [0, 1)");
        if (!(adam_eps > 0.0)) throw ConfigError("trainer: adam_eps must be positive");
        if (epochs < 1) throw ConfigError("trainer: epochs must be at least 1");
        if (seeds.empty()) throw ConfigError("trainer: seed list must not be empty");
    }
};

struct TaskSpec {
    std::string task_id;
    HeadKind kind = HeadKind::ner;
    std::vector<std::string> labels;  // BIO tags or class names; empty for sts
    int batch_size = 1;

    MetricKind metric() const {
        switch (kind) {
            case HeadKind::ner: return MetricKind::micro_f1;
            case HeadKind::sts: return MetricKind::pearson;
            case HeadKind::nli: return MetricKind::accuracy;
        }
        return MetricKind::micro_f1;
    }

    int out_dim() const {
        return kind == HeadKind::sts ? 1 : static_cast<int>(labels.size());
    }

    void validate() const {
        if (task_id.empty()) throw ConfigError("task: empty task_id");
        if (batch_size < 1) throw ConfigError("task " + task_id + ": batch_size must be positive");
        if (kind == HeadKind::sts) {
            if (!labels.empty())
                throw ConfigError("task " + task_id + ": similarity tasks take no labels");
        } else if (kind == HeadKind::ner) {
            TagSet::from_labels(labels);  // throws on malformed label sets
        } else {
            if (labels.size() < 2)
                throw ConfigError("task " + task_id + ": need at least two class labels");
            for (size_t i = 0; i < labels.size(); ++i)
                for (size_t j = 0; j < i; ++j)
                    if (labels[i] == labels[j])
                        throw ConfigError("task " + task_id + ": duplicate label " + labels[i]);
        }
    }
};

// -------------------------------------------------------------- train log

struct TrainRecord {
    int outer = 0;
    int iteration = 0;       // schedule step within the outer loop
    std::string task_id;
    uint32_t batch_index = 0;  // batch ordinal within the task's epoch
    double loss = 0.0;
    uint32_t wraps = 0;        // task's wrap counter after this draw
};

struct TrainLog {
    std::vector<TrainRecord> records;
    std::vector<std::pair<std::string, double>> final_metrics;

    // one line per record: outer, iteration, task_id, loss, wrap counter
    std::string serialize() const {
        std::string out;
        for (const auto& r : records) {
            out += std::to_string(r.outer) + "\t" + std::to_string(r.iteration) + "\t" +
                   r.task_id + "\t" + format_g17(r.loss) + "\t" + std::to_string(r.wraps) +
                   "\n";
        }
        return out;
    }
};

// -------------------------------------------------------------- evaluation

struct EvalResult {
    std::string task_id;
    MetricKind metric = MetricKind::micro_f1;
    double value = 0.0;
    F1Result f1;     // populated for tagging tasks
    int examples = 0;
};

// one prediction record per test example, for offline rescoring
struct PredictionDump {
    std::vector<std::vector<Span>> pred_spans, gold_spans;  // tagging
    std::vector<double> pred_scores, gold_scores;           // similarity
    std::vector<int64_t> pred_labels, gold_labels;          // classification
};

// ---------------------------------------------------------------- trainer

struct TaskRuntime {
    TaskSpec spec;
    TaskData train, test;
    std::vector<Encoding> train_enc, test_enc;
    TagSet tags;  // tagging tasks only
    HeadParams head;
    BatchIter iter;
};

// Optimizer slot for one parameter tensor; t counts that tensor's own
// updates, which differ between the encoder and rarely-drawn heads.
struct AdamSlot {
    std::vector<double> m, v;
    uint64_t t = 0;
};

class Trainer {
  public:
    Trainer(EncoderConfig ecfg, TrainerConfig tcfg, const Vocab* vocab)
        : ecfg_(ecfg), tcfg_(tcfg), vocab_(vocab) {
        ecfg_.validate();
        tcfg_.validate();
        if (!vocab) throw ConfigError("trainer: vocabulary required");
        if (vocab->size() > ecfg_.vocab_size)
            throw ConfigError("trainer: encoder vocab_size smaller than the vocabulary");
    }

    void add_task(const TaskSpec& spec, TaskData train, TaskData test) {
        if (finalized_) throw StateError("trainer: tasks are fixed once finalized");
        spec.validate();
        for (const auto& t : tasks_)
            if (t.spec.task_id == spec.task_id)
                throw ConfigError("trainer: duplicate task_id " + spec.task_id);
        if (train.kind != spec.kind || test.kind != spec.kind)
            throw ConfigError("task " + spec.task_id + ": dataset kind mismatch");
        if (train.size() == 0) throw DataError("task " + spec.task_id + ": empty train split");
        TaskRuntime rt;
        rt.spec = spec;
        rt.train = std::move(train);
        rt.test = std::move(test);
        if (spec.kind == HeadKind::ner) rt.tags = TagSet::from_labels(spec.labels);
        tasks_.push_back(std::move(rt));
    }

    // Encodes datasets and initializes all parameters. Every random stream
    // derives from the run seed, so two trainers built from the same
    // (config, seed, datasets) are bitwise twins.
    void finalize() {
        if (finalized_) throw StateError("trainer: already finalized");
        if (tasks_.empty()) throw ConfigError("trainer: no tasks registered");
        enc_ = EncoderParams::init(ecfg_, derive_seed(tcfg_.seed, {fnv1a64("encoder")}));
        for (auto& rt : tasks_) {
            rt.train_enc = encode_dataset(rt.train, *vocab_, ecfg_.max_seq_len);
            rt.test_enc = encode_dataset(rt.test, *vocab_, ecfg_.max_seq_len);
            rt.head = HeadParams::init(
                ecfg_.hidden_dim, rt.spec.out_dim(), ecfg_.init_std,
                derive_seed(tcfg_.seed, {fnv1a64("head"), fnv1a64(rt.spec.task_id)}));
            rt.iter = BatchIter(rt.train.size(), rt.spec.batch_size, tcfg_.seed,
                                fnv1a64(rt.spec.task_id), /*cycling=*/true);
        }
        sampler_ = Rng(derive_seed(tcfg_.seed, {fnv1a64("sampler")}));
        finalized_ = true;
    }

    int task_count() const { return static_cast<int>(tasks_.size()); }

    int task_index(const std::string& task_id) const {
        for (size_t i = 0; i < tasks_.size(); ++i)
            if (tasks_[i].spec.task_id == task_id) return static_cast<int>(i);
        throw ConfigError("trainer: unknown task " + task_id);
    }

    const TaskRuntime& task(int i) const { return tasks_.at(i); }
    TaskRuntime& task(int i) { return tasks_.at(i); }
    const EncoderParams& encoder() const { return enc_; }
    EncoderParams& encoder() { return enc_; }
    const EncoderConfig& encoder_config() const { return ecfg_; }
    const TrainerConfig& config() const { return tcfg_; }
    const Vocab& vocab() const { return *vocab_; }
    uint64_t global_step() const { return step_; }
    int outer_index() const { return outer_; }
    int loop_position() const { return pos_; }
    Rng& sampler() { return sampler_; }
    std::map<std::string, AdamSlot>& adam_state() { return adam_; }

    // batches per outer loop for the largest task, the round-robin loop bound
    int iterations_per_loop() const {
        require_finalized();
        int iters = 0;
        for (const auto& rt : tasks_) iters = std::max(iters, rt.iter.batches_per_epoch());
        return iters;
    }

    // total single-task draws per proportional outer loop
    int steps_per_loop_proportional() const {
        require_finalized();
        int total = 0;
        for (const auto& rt : tasks_) total += rt.iter.batches_per_epoch();
        return total;
    }

    int steps_per_loop() const {
        return tcfg_.schedule == Schedule::proportional
                   ? steps_per_loop_proportional()
                   : iterations_per_loop() * task_count();
    }

    bool done() const { return outer_ >= tcfg_.outer_loops; }

    // one proportional draw: task i with probability |train_i| / sum |train_j|
    int sample_task() {
        require_finalized();
        double total = 0.0;
        for (const auto& rt : tasks_) total += rt.train.size();
        const double u = sampler_.uniform() * total;
        double cum = 0.0;
        for (size_t i = 0; i < tasks_.size(); ++i) {
            cum += tasks_[i].train.size();
            if (u < cum) return static_cast<int>(i);
        }
        return task_count() - 1;
    }

    // One batch, one loss, one update for exactly this task's head plus the
    // encoder. Returns the pre-update loss.
    TrainRecord update_step(int task_idx, int outer, int iteration) {
        require_finalized();
        TaskRuntime& rt = tasks_.at(task_idx);
        const uint32_t batch_index = rt.iter.next_batch_ordinal();
        const std::vector<int> idx = rt.iter.next();

        Batch batch = collate(rt.train, rt.train_enc, idx,
                              rt.spec.kind == HeadKind::ner ? &rt.tags : nullptr);
        Tape tape;
        ForwardCtx ctx{/*train=*/true, tcfg_.seed, step_};
        Tensor hidden = encoder_forward(tape, enc_, batch.packed, ctx);
        Tensor loss = task_loss(tape, hidden, rt, batch);
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value))
            throw NumericError("non-finite loss at global step " + std::to_string(step_) +
                               " (task " + rt.spec.task_id + ")");
        tape.backward(loss);
        apply_updates(rt);
        ++step_;

        TrainRecord rec;
        rec.outer = outer;
        rec.iteration = iteration;
        rec.task_id = rt.spec.task_id;
        rec.batch_index = batch_index;
        rec.loss = loss_value;
        rec.wraps = rt.iter.wraps();
        return rec;
    }

    // Advances the run by exactly one update, appending its record. Safe to
    // stop and checkpoint between any two calls.
    void step(TrainLog& log) {
        require_finalized();
        if (done()) throw StateError("trainer: run already complete");
        if (tcfg_.schedule == Schedule::single_task)
            throw ConfigError(
                "trainer: single_task dispatches to per-task fine-tuning, not this loop");
        if (pos_ == 0)
            for (auto& rt : tasks_) rt.iter.normalize_loop_start();

        if (tcfg_.schedule == Schedule::round_robin) {
            const int iteration = pos_ / task_count();
            const int task_idx = pos_ % task_count();
            log.records.push_back(update_step(task_idx, outer_, iteration));
        } else {
            const int task_idx = sample_task();
            log.records.push_back(update_step(task_idx, outer_, pos_));
        }
        ++pos_;
        if (pos_ >= steps_per_loop()) {
            pos_ = 0;
            ++outer_;
        }
    }

    void run(TrainLog& log) {
        require_finalized();
        while (!done()) step(log);
    }

    // Restores counters after parameters, Adam slots, and iterator states
    // have been put back; the sampler state is restored separately.
    void restore_position(uint64_t step, int outer, int pos) {
        require_finalized();
        step_ = step;
        outer_ = outer;
        pos_ = pos;
    }

    EvalResult evaluate(int task_idx, PredictionDump* dump = nullptr) {
        require_finalized();
        TaskRuntime& rt = tasks_.at(task_idx);
        if (rt.test.size() == 0)
            throw EvalError("task " + rt.spec.task_id + ": empty test split");

        EvalResult res;
        res.task_id = rt.spec.task_id;
        res.metric = rt.spec.metric();
        res.examples = rt.test.size();

        PredictionDump local;
        PredictionDump& out = dump ? *dump : local;
        BatchIter it(rt.test.size(), kEvalBatch, 0, 0, /*cycling=*/false);
        for (std::vector<int> idx = it.next(); !idx.empty(); idx = it.next()) {
            Batch batch = collate(rt.test, rt.test_enc, idx,
                                  rt.spec.kind == HeadKind::ner ? &rt.tags : nullptr);
            Tape tape;
            Tensor hidden = encoder_forward(tape, enc_, batch.packed, ForwardCtx{});
            eval_batch(tape, hidden, rt, batch, out);
        }

        switch (rt.spec.kind) {
            case HeadKind::ner:
                res.f1 = span_f1(out.pred_spans, out.gold_spans);
                res.value = res.f1.f1;
                break;
            case HeadKind::sts:
                res.value = pearson(out.pred_scores, out.gold_scores);
                break;
            case HeadKind::nli:
                res.value = accuracy(out.pred_labels, out.gold_labels);
                break;
        }
        return res;
    }

    std::vector<EvalResult> evaluate_all(std::vector<PredictionDump>* dumps = nullptr) {
        std::vector<EvalResult> out;
        if (dumps) dumps->resize(tasks_.size());
        for (int i = 0; i < task_count(); ++i)
            out.push_back(evaluate(i, dumps ? &(*dumps)[i] : nullptr));
        return out;
    }

    // every trainable parameter under its canonical checkpoint name
    std::vector<std::pair<std::string, Tensor*>> named_params() {
        std::vector<std::pair<std::string, Tensor*>> out = enc_.named();
        for (auto& rt : tasks_) {
            out.emplace_back("head." + rt.spec.task_id + ".weight", &rt.head.w);
            out.emplace_back("head." + rt.spec.task_id + ".bias", &rt.head.b);
        }
        return out;
    }

    static constexpr int kEvalBatch = 64;

  private:
    EncoderConfig ecfg_;
    TrainerConfig tcfg_;
    const Vocab* vocab_;
    std::vector<TaskRuntime> tasks_;
    EncoderParams enc_;
    Rng sampler_{0};
    std::map<std::string, AdamSlot> adam_;
    bool finalized_ = false;
    uint64_t step_ = 0;
    int outer_ = 0;
    int pos_ = 0;

    void require_finalized() const {
        if (!finalized_) throw StateError("trainer: finalize() before use");
    }

    Tensor task_loss(Tape& tape, const Tensor& hidden, TaskRuntime& rt, const Batch& batch) {
        switch (rt.spec.kind) {
            case HeadKind::ner: return ner_loss(tape, hidden, rt.head, batch.ner_tags).loss;
            case HeadKind::sts: return sts_loss(tape, hidden, rt.head, batch.sts_targets).loss;
            case HeadKind::nli: return nli_loss(tape, hidden, rt.head, batch.nli_labels).loss;
        }
        throw ConfigError("task " + rt.spec.task_id + ": unknown head kind");
    }

    // optimizer application to the encoder plus exactly one head
    void apply_updates(TaskRuntime& rt) {
        std::vector<std::pair<std::string, Tensor*>> params = enc_.named();
        params.emplace_back("head." + rt.spec.task_id + ".weight", &rt.head.w);
        params.emplace_back("head." + rt.spec.task_id + ".bias", &rt.head.b);
        for (auto& [name, p] : params) {
            if (!p->grad) throw StateError("update: parameter " + name + " has no gradient");
            std::vector<double>& w = *p->data;
            std::vector<double>& g = *p->grad;
            if (tcfg_.optimizer == Optimizer::sgd) {
                for (size_t i = 0; i < w.size(); ++i) w[i] -= tcfg_.alpha * g[i];
            } else {
                AdamSlot& slot = adam_[name];
                if (slot.m.empty()) {
                    slot.m.assign(w.size(), 0.0);
                    slot.v.assign(w.size(), 0.0);
                }
                ++slot.t;
                const double c1 = 1.0 - std::pow(tcfg_.beta1, static_cast<double>(slot.t));
                const double c2 = 1.0 - std::pow(tcfg_.beta2, static_cast<double>(slot.t));
                for (size_t i = 0; i < w.size(); ++i) {
                    slot.m[i] = tcfg_.beta1 * slot.m[i] + (1.0 - tcfg_.beta1) * g[i];
                    slot.v[i] = tcfg_.beta2 * slot.v[i] + (1.0 - tcfg_.beta2) * g[i] * g[i];
                    w[i] -= tcfg_.alpha * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) +
                                                              tcfg_.adam_eps);
                }
            }
            std::fill(g.begin(), g.end(), 0.0);
        }
    }

    void eval_batch(Tape& tape, const Tensor& hidden, TaskRuntime& rt, const Batch& batch,
                    PredictionDump& out) {
        if (rt.spec.kind == HeadKind::ner) {
            NerOut o = ner_loss(tape, hidden, rt.head, batch.ner_tags);
            const int t = o.logits.shape[1], c = o.logits.shape[2];
            for (size_t row = 0; row < batch.indices.size(); ++row) {
                const double* logits = o.logits.ptr() + row * static_cast<size_t>(t) * c;
                out.pred_spans.push_back(ner_decode(logits, t, c, rt.tags, *batch.encs[row]));
                out.gold_spans.push_back(gold_spans(rt.test.ner[batch.indices[row]], rt.tags));
            }
        } else if (rt.spec.kind == HeadKind::sts) {
            StsOut o = sts_loss(tape, hidden, rt.head, batch.sts_targets);
            const std::vector<double> preds = sts_predictions(o.raw);
            for (size_t row = 0; row < batch.indices.size(); ++row) {
                out.pred_scores.push_back(preds[row]);
                out.gold_scores.push_back(batch.sts_targets[row]);
            }
        } else {
            NliOut o = nli_loss(tape, hidden, rt.head, batch.nli_labels);
            const int c = o.logits.shape[1];
            for (size_t row = 0; row < batch.indices.size(); ++row) {
                out.pred_labels.push_back(
                    argmax_lowest(o.logits.ptr() + row * static_cast<size_t>(c), c));
                out.gold_labels.push_back(batch.nli_labels[row]);
            }
        }
    }
};

// ------------------------------------------------- per-task fine-tuning

struct FinetuneCell {
    uint64_t seed = 0;
    int epoch = 0;  // 1-based
    double value = 0.0;
};

struct FinetuneResult {
    std::vector<FinetuneCell> table;  // seeds x epochs, epoch-major per seed
    uint64_t best_seed = 0;
    int best_epoch = 0;
    double best_value = 0.0;
    EncoderParams best_encoder;
    HeadParams best_head;
    TrainLog log;
};

// Per-task baseline: fresh encoder and head per seed, one evaluation per
// epoch, best cell wins. Ties resolve to the lowest (seed, epoch) pair.
inline FinetuneResult sequential_finetune(const EncoderConfig& ecfg, const TrainerConfig& tcfg,
                                          const Vocab& vocab, const TaskSpec& spec,
                                          const TaskData& train, const TaskData& test) {
    tcfg.validate();
    FinetuneResult res;
    bool have_best = false;
    for (uint64_t seed : tcfg.seeds) {
        TrainerConfig run_cfg = tcfg;
        run_cfg.seed = seed;
        run_cfg.schedule = Schedule::round_robin;  // one task, so one epoch per loop
        run_cfg.outer_loops = tcfg.epochs;
        Trainer tr(ecfg, run_cfg, &vocab);
        tr.add_task(spec, train, test);
        tr.finalize();
        for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
            const int per_epoch = tr.steps_per_loop();
            for (int s = 0; s < per_epoch; ++s) tr.step(res.log);
            const double value = tr.evaluate(0).value;
            res.table.push_back({seed, epoch, value});
            const bool better =
                !have_best || value > res.best_value ||
                (value == res.best_value &&
                 std::make_pair(seed, epoch) < std::make_pair(res.best_seed, res.best_epoch));
            if (better) {
                have_best = true;
                res.best_seed = seed;
                res.best_epoch = epoch;
                res.best_value = value;
                res.best_encoder = tr.encoder().clone();
                res.best_head = tr.task(0).head.clone();
            }
        }
    }
    return res;
}

}  // namespace mtenc
