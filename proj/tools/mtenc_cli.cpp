// Command-line surface over the library: dataset generation, training,
// evaluation, gradient checking, and the shared-encoder benchmark.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
// state error, 5 io or persisted-format error. Reports go to stdout,
// structured logs to --log, errors to stderr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtenc/bench.hpp"
#include "mtenc/checkpoint.hpp"
#include "mtenc/config.hpp"
#include "mtenc/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace mtenc;

namespace {

const char* metric_name(MetricKind m) {
    switch (m) {
        case MetricKind::micro_f1: return "micro_f1";
        case MetricKind::pearson: return "pearson";
        case MetricKind::accuracy: return "accuracy";
    }
    return "unknown";
}

const char* kind_name(HeadKind k) {
    switch (k) {
        case HeadKind::ner: return "ner";
        case HeadKind::sts: return "sts";
        case HeadKind::nli: return "nli";
    }
    return "unknown";
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t comma = s.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, comma - start));
        start = comma + 1;
    }
    if (out.size() == 1 && out[0].empty()) out.clear();
    return out;
}

// narrows the registry to the requested ids, keeping config order
void apply_task_filter(RunConfig& cfg, const std::string& csv) {
    if (csv.empty()) return;
    std::set<std::string> want;
    for (const std::string& id : split_csv(csv)) want.insert(id);
    if (want.empty()) throw ConfigError("--tasks: empty task list");
    for (const std::string& id : want) {
        bool found = false;
        for (const auto& tb : cfg.tasks) found = found || tb.spec.task_id == id;
        if (!found) throw ConfigError("--tasks: unknown task " + id);
    }
    std::vector<TaskBinding> kept;
    for (auto& tb : cfg.tasks)
        if (want.count(tb.spec.task_id)) kept.push_back(std::move(tb));
    cfg.tasks = std::move(kept);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

// ------------------------------------------------------------------- synth

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
    RunConfig cfg = load_run_config(config_path);
    bool any = false;
    for (const auto& tb : cfg.tasks) any = any || tb.synthetic;
    if (!any) throw ConfigError("synth: config declares no synthetic tasks");

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    for (const auto& tb : cfg.tasks) {
        if (!tb.synthetic) continue;
        const TaskDataSet ds = realize_task(tb);
        const char* ext = tb.spec.kind == HeadKind::ner ? "conll" : "tsv";
        const fs::path train = fs::path(out_dir) / (tb.spec.task_id + ".train." + ext);
        const fs::path test = fs::path(out_dir) / (tb.spec.task_id + ".test." + ext);
        if (tb.spec.kind == HeadKind::ner) {
            write_text(train, conll_to_string(ds.train.ner));
            write_text(test, conll_to_string(ds.test.ner));
        } else {
            write_text(train, pairs_to_string(ds.train.pairs, tb.spec.kind));
            write_text(test, pairs_to_string(ds.test.pairs, tb.spec.kind));
        }
        std::printf("%-8s %s  %d train -> %s  %d test -> %s\n", tb.spec.task_id.c_str(),
                    kind_name(tb.spec.kind), ds.train.size(), train.c_str(), ds.test.size(),
                    test.c_str());
    }
    return 0;
}

// ------------------------------------------------------------------- train

struct TrainFlags {
    std::string config, schedule, tasks, out, log, resume;
    uint64_t seed = 0;
    bool seed_given = false;
    int outer_loops = 0;
    bool outer_given = false;
};

int train_single_task(const RunConfig& cfg, const TrainFlags& fl) {
    if (!fl.out.empty())
        throw ConfigError(
            "train: single_task trains one model per task; there is no shared "
            "checkpoint to write");
    if (!fl.resume.empty())
        throw ConfigError("train: single_task runs cannot resume from a checkpoint");

    const RunWorld world = build_world(cfg);
    TrainLog combined;
    std::printf("%-8s %-8s %8s  %s\n", "task", "metric", "best", "selected");
    for (size_t i = 0; i < cfg.tasks.size(); ++i) {
        const TaskSpec& spec = cfg.tasks[i].spec;
        FinetuneResult res = sequential_finetune(cfg.encoder, cfg.trainer, world.vocab, spec,
                                                 world.data[i].train, world.data[i].test);
        std::printf("%-8s %-8s %8.4f  seed %llu, epoch %d\n", spec.task_id.c_str(),
                    metric_name(spec.metric()), res.best_value,
                    static_cast<unsigned long long>(res.best_seed), res.best_epoch);
        for (const auto& r : res.log.records) combined.records.push_back(r);
        combined.final_metrics.emplace_back(spec.task_id, res.best_value);
    }
    if (!fl.log.empty()) write_text(fl.log, combined.serialize());
    return 0;
}

int cmd_train(const TrainFlags& fl) {
    RunConfig cfg = load_run_config(fl.config);
    if (fl.seed_given) cfg.trainer.seed = fl.seed;
    if (!fl.schedule.empty()) cfg.trainer.schedule = schedule_from(fl.schedule);
    if (fl.outer_given) cfg.trainer.outer_loops = fl.outer_loops;
    apply_task_filter(cfg, fl.tasks);
    cfg.trainer.validate();

    if (cfg.trainer.schedule == Schedule::single_task) return train_single_task(cfg, fl);

    const RunWorld world = build_world(cfg);
    Trainer tr = build_trainer(cfg, world);
    if (!fl.resume.empty()) restore(tr, load_checkpoint(fl.resume));

    TrainLog log;
    tr.run(log);
    const std::vector<EvalResult> results = tr.evaluate_all();
    for (const EvalResult& r : results) log.final_metrics.emplace_back(r.task_id, r.value);

    std::printf("trained %d task(s), %zu update(s), %d outer loop(s)\n", tr.task_count(),
                log.records.size(), cfg.trainer.outer_loops);
    for (const EvalResult& r : results)
        std::printf("%-8s %-8s %8.4f  (%d test examples)\n", r.task_id.c_str(),
                    metric_name(r.metric), r.value, r.examples);

    if (!fl.out.empty()) save_checkpoint(capture(tr), fl.out);
    if (!fl.log.empty()) write_text(fl.log, log.serialize());
    return 0;
}

// -------------------------------------------------------------------- eval

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& tasks_csv, const std::string& dump_path) {
    RunConfig cfg = load_run_config(config_path);
    apply_task_filter(cfg, tasks_csv);
    const CheckpointState st = load_checkpoint(ckpt_path);
    const RunWorld world = build_world(cfg);
    Trainer tr = build_trainer(cfg, world);
    restore(tr, st);

    std::vector<PredictionDump> dumps;
    const std::vector<EvalResult> results = tr.evaluate_all(&dumps);

    std::printf("%-8s %-5s %-8s %10s %9s\n", "task", "kind", "metric", "value", "examples");
    for (int i = 0; i < tr.task_count(); ++i) {
        const EvalResult& r = results[i];
        std::printf("%-8s %-5s %-8s %10.6f %9d\n", r.task_id.c_str(),
                    kind_name(tr.task(i).spec.kind), metric_name(r.metric), r.value,
                    r.examples);
    }

    if (!dump_path.empty()) {
        std::string out;
        for (int i = 0; i < tr.task_count(); ++i) {
            const TaskSpec& spec = tr.task(i).spec;
            const PredictionDump& d = dumps[i];
            const size_t n = spec.kind == HeadKind::ner   ? d.pred_spans.size()
                             : spec.kind == HeadKind::sts ? d.pred_scores.size()
                                                          : d.pred_labels.size();
            for (size_t j = 0; j < n; ++j) {
                nlohmann::json line;
                line["task"] = spec.task_id;
                line["metric"] = metric_name(spec.metric());
                line["example"] = j;
                if (spec.kind == HeadKind::ner) {
                    auto spans = [](const std::vector<Span>& ss) {
                        nlohmann::json arr = nlohmann::json::array();
                        for (const Span& s : ss) arr.push_back({s.start, s.end, s.type});
                        return arr;
                    };
                    line["pred_spans"] = spans(d.pred_spans[j]);
                    line["gold_spans"] = spans(d.gold_spans[j]);
                } else if (spec.kind == HeadKind::sts) {
                    line["pred"] = d.pred_scores[j];
                    line["gold"] = d.gold_scores[j];
                } else {
                    line["pred"] = d.pred_labels[j];
                    line["gold"] = d.gold_labels[j];
                }
                out += line.dump();
                out += '\n';
            }
        }
        write_text(dump_path, out);
    }
    return 0;
}

// ------------------------------------------------------------------- bench

int cmd_bench(const std::string& ckpt_path, int n_inputs, int seq_len, int reps,
              uint64_t seed) {
    const CheckpointState st = load_checkpoint(ckpt_path);
    MaterializedParams mp = materialize_params(st);
    std::vector<std::pair<HeadKind, HeadParams*>> heads;
    for (size_t i = 0; i < mp.heads.size(); ++i)
        heads.emplace_back(mp.specs[i].kind, &mp.heads[i]);
    if (seq_len == 0) seq_len = std::min(128, st.ecfg.max_seq_len);

    const BenchReport r = run_bench(mp.enc, heads, n_inputs, seq_len, seed, reps);

    std::printf("heads %d, inputs %d, seq_len %d, reps %d\n", r.tasks, r.inputs, r.seq_len,
                r.reps);
    std::printf("encoder forwards per repetition: shared %llu, isolated %llu (ratio %.2f)\n",
                static_cast<unsigned long long>(r.shared_forwards),
                static_cast<unsigned long long>(r.isolated_forwards), r.forward_ratio);
    std::printf("median wall clock: shared %.3f ms, isolated %.3f ms (ratio %.2f)\n",
                r.shared_ms, r.isolated_ms, r.wall_ratio);
    std::printf("checksums: shared %.12e, isolated %.12e (%s)\n", r.shared_checksum,
                r.isolated_checksum,
                r.shared_checksum == r.isolated_checksum ? "match" : "MISMATCH");
    return 0;
}

// --------------------------------------------------------------- gradcheck

int cmd_gradcheck(const std::vector<std::string>& names, const std::string& corrupt,
                  uint64_t seed) {
    Tape::corrupt_op() = corrupt;
    GradCheckReport rep;
    try {
        rep = run_gradcheck(names, seed);
    } catch (...) {
        Tape::corrupt_op().clear();
        throw;
    }
    Tape::corrupt_op().clear();

    std::printf("step %.0e, tolerance %.0e\n", rep.step, rep.tolerance);
    int failed = 0;
    for (const GradCheckResult& c : rep.checks) {
        std::printf("%s  %-14s max relative error %.3e\n", c.pass ? "PASS" : "FAIL",
                    c.name.c_str(), c.max_rel_err);
        failed += c.pass ? 0 : 1;
    }
    std::printf("%zu passed, %d failed\n", rep.checks.size() - failed, failed);
    return failed == 0 ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multitask shared-encoder trainer"};
    app.require_subcommand(1);

    // synth
    std::string sy_config, sy_out;
    CLI::App* synth = app.add_subcommand("synth", "generate synthetic datasets to files");
    synth->add_option("--config", sy_config, "run config (json)")->required();
    synth->add_option("--out", sy_out, "output directory")->required();

    // train
    TrainFlags tf;
    CLI::App* train = app.add_subcommand("train", "train the shared encoder and task heads");
    train->add_option("--config", tf.config, "run config (json)")->required();
    CLI::Option* seed_opt = train->add_option("--seed", tf.seed, "override trainer seed");
    train->add_option("--schedule", tf.schedule,
                      "round_robin | proportional | single_task");
    CLI::Option* outer_opt =
        train->add_option("--outer-loops", tf.outer_loops, "override outer loop count");
    train->add_option("--tasks", tf.tasks, "comma-separated task subset");
    train->add_option("--out", tf.out, "checkpoint path to write");
    train->add_option("--log", tf.log, "training log path to write");
    train->add_option("--resume", tf.resume, "checkpoint to continue from");

    // eval
    std::string ev_config, ev_ckpt, ev_tasks, ev_dump;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on every task");
    eval->add_option("--config", ev_config, "run config (json)")->required();
    eval->add_option("--checkpoint", ev_ckpt, "checkpoint to evaluate")->required();
    eval->add_option("--tasks", ev_tasks, "comma-separated task subset");
    eval->add_option("--dump-predictions", ev_dump, "write per-example predictions (ndjson)");

    // bench
    std::string be_ckpt;
    int be_inputs = 8, be_seq = 0, be_reps = 5;
    uint64_t be_seed = 0;
    CLI::App* bench = app.add_subcommand("bench", "shared vs isolated encoder timing");
    bench->add_option("--checkpoint", be_ckpt, "checkpoint to benchmark")->required();
    bench->add_option("--inputs", be_inputs, "number of benchmark inputs");
    bench->add_option("--seq-len", be_seq, "input length (default min(128, max_seq_len))");
    bench->add_option("--reps", be_reps, "timed repetitions (at least 5)");
    bench->add_option("--seed", be_seed, "input generation seed");

    // gradcheck
    std::string gc_ops, gc_corrupt;
    uint64_t gc_seed = 0;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of every derivative");
    CLI::Option* ops_opt =
        gradcheck->add_option("--ops", gc_ops, "comma-separated check subset");
    gradcheck->add_option("--corrupt", gc_corrupt,
                          "fault-injection hook: scale the named op's derivative");
    gradcheck->add_option("--seed", gc_seed, "probe generation seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // bad usage is a configuration error
    }

    try {
        if (synth->parsed()) return cmd_synth(sy_config, sy_out);
        if (train->parsed()) {
            tf.seed_given = seed_opt->count() > 0;
            tf.outer_given = outer_opt->count() > 0;
            return cmd_train(tf);
        }
        if (eval->parsed()) return cmd_eval(ev_config, ev_ckpt, ev_tasks, ev_dump);
        if (bench->parsed()) return cmd_bench(be_ckpt, be_inputs, be_seq, be_reps, be_seed);
        if (gradcheck->parsed()) {
            const std::vector<std::string> names =
                ops_opt->count() > 0 ? split_csv(gc_ops) : gradcheck_names();
            return cmd_gradcheck(names, gc_corrupt, gc_seed);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const LabelError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const EvalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const EmptyLossError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const StateError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const OracleError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 5;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 5;
    } catch (const VersionError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 5;
    } catch (const CorruptError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 5;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 5;
    }
    return 0;
}
