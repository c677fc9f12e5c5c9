#pragma once

// Run configuration: one JSON document declaring the encoder, the trainer,
// the vocabulary budget, and the task registry. Parsing is total: the whole
// document is schema-checked (unknown keys included) before anything is
// generated, read, or allocated, so a bad config never leaves side effects.
// Registry order is the document order, with profile tasks first.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtenc/common.hpp"
#include "mtenc/data.hpp"
#include "mtenc/encoder.hpp"
#include "mtenc/tokenizer.hpp"
#include "mtenc/trainer.hpp"

namespace mtenc {

// how one task gets its data: a seeded generator or a pair of files
struct TaskBinding {
    TaskSpec spec;
    bool synthetic = false;
    uint64_t synth_seed = 0;
    int n_train = 0;
    int n_test = 0;
    int pool_size = 120;
    std::string train_path;
    std::string test_path;
};

struct RunConfig {
    EncoderConfig encoder;
    TrainerConfig trainer;
    int vocab_target = 1024;
    std::vector<TaskBinding> tasks;
};

namespace cfgdetail {

using json = nlohmann::json;

[[noreturn]] inline void fail(const std::string& where, const std::string& what) {
    throw ConfigError("config: " + where + ": " + what);
}

inline void expect_object(const json& j, const std::string& where) {
    if (!j.is_object()) fail(where, "expected an object");
}

inline void reject_unknown(const json& j, const std::string& where,
                           const std::set<std::string>& known) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) fail(where, "unknown key \"" + key + "\"");
}

inline int get_int(const json& j, const std::string& where, const std::string& key,
                   int dflt) {
    if (!j.contains(key)) return dflt;
    const json& v = j.at(key);
    if (!v.is_number_integer()) fail(where + "." + key, "expected an integer");
    return v.get<int>();
}

inline double get_num(const json& j, const std::string& where, const std::string& key,
                      double dflt) {
    if (!j.contains(key)) return dflt;
    const json& v = j.at(key);
    if (!v.is_number()) fail(where + "." + key, "expected a number");
    return v.get<double>();
}

inline uint64_t get_seed(const json& j, const std::string& where, const std::string& key,
                         uint64_t dflt) {
    if (!j.contains(key)) return dflt;
    const json& v = j.at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<int64_t>() < 0))
        fail(where + "." + key, "expected a non-negative integer");
    return v.get<uint64_t>();
}

inline std::string get_str(const json& j, const std::string& where, const std::string& key) {
    const json& v = j.at(key);
    if (!v.is_string()) fail(where + "." + key, "expected a string");
    return v.get<std::string>();
}

inline EncoderConfig parse_encoder(const json& j) {
    EncoderConfig cfg;
    if (j.is_null()) return cfg;
    expect_object(j, "encoder");
    reject_unknown(j, "encoder",
                   {"num_layers", "hidden_dim", "num_heads", "ffn_dim", "vocab_size",
                    "max_seq_len", "num_segments", "dropout_rate", "init_std", "ln_eps"});
    cfg.num_layers = get_int(j, "encoder", "num_layers", cfg.num_layers);
    cfg.hidden_dim = get_int(j, "encoder", "hidden_dim", cfg.hidden_dim);
    cfg.num_heads = get_int(j, "encoder", "num_heads", cfg.num_heads);
    cfg.ffn_dim = get_int(j, "encoder", "ffn_dim", cfg.ffn_dim);
    cfg.vocab_size = get_int(j, "encoder", "vocab_size", cfg.vocab_size);
    cfg.max_seq_len = get_int(j, "encoder", "max_seq_len", cfg.max_seq_len);
    cfg.num_segments = get_int(j, "encoder", "num_segments", cfg.num_segments);
    cfg.dropout_rate = get_num(j, "encoder", "dropout_rate", cfg.dropout_rate);
    cfg.init_std = get_num(j, "encoder", "init_std", cfg.init_std);
    cfg.ln_eps = get_num(j, "encoder", "ln_eps", cfg.ln_eps);
    return cfg;
}

inline TrainerConfig parse_trainer(const json& j) {
    TrainerConfig cfg;
    if (j.is_null()) return cfg;
    expect_object(j, "trainer");
    reject_unknown(j, "trainer",
                   {"optimizer", "alpha", "beta1", "beta2", "adam_eps", "schedule",
                    "outer_loops", "seed", "seeds", "epochs"});
    if (j.contains("optimizer")) cfg.optimizer = optimizer_from(get_str(j, "trainer", "optimizer"));
    cfg.alpha = get_num(j, "trainer", "alpha", cfg.alpha);
    cfg.beta1 = get_num(j, "trainer", "beta1", cfg.beta1);
    cfg.beta2 = get_num(j, "trainer", "beta2", cfg.beta2);
    cfg.adam_eps = get_num(j, "trainer", "adam_eps", cfg.adam_eps);
    if (j.contains("schedule")) cfg.schedule = schedule_from(get_str(j, "trainer", "schedule"));
    cfg.outer_loops = get_int(j, "trainer", "outer_loops", cfg.outer_loops);
    cfg.seed = get_seed(j, "trainer", "seed", cfg.seed);
    cfg.epochs = get_int(j, "trainer", "epochs", cfg.epochs);
    if (j.contains("seeds")) {
        const json& s = j.at("seeds");
        if (!s.is_array()) fail("trainer.seeds", "expected an array");
        cfg.seeds.clear();
        for (size_t i = 0; i < s.size(); ++i) {
            if (!s[i].is_number_integer() || (!s[i].is_number_unsigned() && s[i].get<int64_t>() < 0))
                fail("trainer.seeds", "entry " + std::to_string(i) +
                                          " is not a non-negative integer");
            cfg.seeds.push_back(s[i].get<uint64_t>());
        }
    }
    return cfg;
}

inline TaskBinding parse_task(const json& j, size_t index) {
    const std::string where = "tasks[" + std::to_string(index) + "]";
    expect_object(j, where);
    reject_unknown(j, where,
                   {"task_id", "head_kind", "label_names", "batch_size", "synthetic", "data"});
    if (!j.contains("task_id")) fail(where, "missing task_id");
    if (!j.contains("head_kind")) fail(where, "missing head_kind");

    TaskBinding tb;
    tb.spec.task_id = get_str(j, where, "task_id");
    const std::string kind = get_str(j, where, "head_kind");
    if (kind == "ner")
        tb.spec.kind = HeadKind::ner;
    else if (kind == "sts")
        tb.spec.kind = HeadKind::sts;
    else if (kind == "nli")
        tb.spec.kind = HeadKind::nli;
    else
        fail(where + ".head_kind", "unknown kind \"" + kind + "\"");
    tb.spec.batch_size = get_int(j, where, "batch_size", 1);

    const bool has_synth = j.contains("synthetic");
    const bool has_data = j.contains("data");
    if (has_synth == has_data)
        fail(where, "exactly one of \"synthetic\" or \"data\" is required");

    if (has_synth) {
        const json& s = j.at("synthetic");
        expect_object(s, where + ".synthetic");
        reject_unknown(s, where + ".synthetic", {"seed", "n_train", "n_test", "pool_size"});
        if (j.contains("label_names"))
            fail(where, "synthetic tasks define their own label set");
        tb.synthetic = true;
        tb.synth_seed = get_seed(s, where + ".synthetic", "seed", 0);
        tb.n_train = get_int(s, where + ".synthetic", "n_train", 0);
        tb.n_test = get_int(s, where + ".synthetic", "n_test", 0);
        tb.pool_size = get_int(s, where + ".synthetic", "pool_size", 120);
        if (tb.n_train < 1 || tb.n_test < 1)
            fail(where + ".synthetic", "n_train and n_test must be positive");
        if (tb.spec.kind == HeadKind::ner)
            tb.spec.labels = synth::ner_labels();
        else if (tb.spec.kind == HeadKind::nli)
            tb.spec.labels = synth::nli_labels();
    } else {
        const json& d = j.at("data");
        expect_object(d, where + ".data");
        reject_unknown(d, where + ".data", {"train", "test"});
        if (!d.contains("train") || !d.contains("test"))
            fail(where + ".data", "needs both \"train\" and \"test\" paths");
        tb.train_path = get_str(d, where + ".data", "train");
        tb.test_path = get_str(d, where + ".data", "test");
        if (j.contains("label_names")) {
            const json& l = j.at("label_names");
            if (!l.is_array()) fail(where + ".label_names", "expected an array");
            for (const auto& name : l) {
                if (!name.is_string()) fail(where + ".label_names", "entries must be strings");
                tb.spec.labels.push_back(name.get<std::string>());
            }
        }
        if (tb.spec.kind != HeadKind::sts && tb.spec.labels.empty())
            fail(where, "file-backed tagging and classification tasks need label_names");
    }
    return tb;
}

// The built-in eight-task registry: one similarity task, two entailment
// tasks, five taggers. The fixed, deliberately uneven train/test counts
// and batch sizes give the schedules a realistic mix of epoch lengths.
inline std::vector<TaskBinding> bench8_tasks() {
    struct Row {
        const char* id;
        HeadKind kind;
        int batch, n_train, n_test;
        uint64_t seed;
    };
    const Row rows[] = {
        {"sts", HeadKind::sts, 40, 1641, 410, 8001},
        {"nli-a", HeadKind::nli, 40, 12627, 1422, 8002},
        {"nli-b", HeadKind::nli, 40, 8588, 302, 8003},
        {"ner-a", HeadKind::ner, 25, 36384, 23462, 8004},
        {"ner-b", HeadKind::ner, 25, 17310, 11462, 8005},
        {"ner-c", HeadKind::ner, 25, 16468, 13594, 8006},
        {"ner-d", HeadKind::ner, 25, 27837, 45009, 8007},
        {"ner-e", HeadKind::ner, 25, 2695, 2260, 8008},
    };
    std::vector<TaskBinding> out;
    for (const Row& r : rows) {
        TaskBinding tb;
        tb.spec.task_id = r.id;
        tb.spec.kind = r.kind;
        tb.spec.batch_size = r.batch;
        if (r.kind == HeadKind::ner)
            tb.spec.labels = synth::ner_labels();
        else if (r.kind == HeadKind::nli)
            tb.spec.labels = synth::nli_labels();
        tb.synthetic = true;
        tb.synth_seed = r.seed;
        tb.n_train = r.n_train;
        tb.n_test = r.n_test;
        out.push_back(std::move(tb));
    }
    return out;
}

}  // namespace cfgdetail

inline RunConfig parse_run_config(const std::string& text) {
    using cfgdetail::fail;
    cfgdetail::json doc;
    try {
        doc = cfgdetail::json::parse(text);
    } catch (const cfgdetail::json::parse_error& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    cfgdetail::expect_object(doc, "document");
    cfgdetail::reject_unknown(doc, "document",
                              {"encoder", "trainer", "vocab", "profile", "tasks"});

    RunConfig cfg;
    cfg.encoder = cfgdetail::parse_encoder(doc.contains("encoder") ? doc.at("encoder")
                                                                   : cfgdetail::json());
    cfg.trainer = cfgdetail::parse_trainer(doc.contains("trainer") ? doc.at("trainer")
                                                                   : cfgdetail::json());
    if (doc.contains("vocab")) {
        const auto& v = doc.at("vocab");
        cfgdetail::expect_object(v, "vocab");
        cfgdetail::reject_unknown(v, "vocab", {"target_size"});
        cfg.vocab_target = cfgdetail::get_int(v, "vocab", "target_size", cfg.vocab_target);
        if (cfg.vocab_target < 1) fail("vocab.target_size", "must be positive");
    }

    if (doc.contains("profile")) {
        const std::string profile = cfgdetail::get_str(doc, "document", "profile");
        if (profile != "bench8") fail("profile", "unknown profile \"" + profile + "\"");
        cfg.tasks = cfgdetail::bench8_tasks();
    }
    if (doc.contains("tasks")) {
        const auto& tasks = doc.at("tasks");
        if (!tasks.is_array()) fail("tasks", "expected an array");
        for (size_t i = 0; i < tasks.size(); ++i)
            cfg.tasks.push_back(cfgdetail::parse_task(tasks[i], i));
    }
    if (cfg.tasks.empty()) throw ConfigError("config: no tasks declared");

    std::set<std::string> ids;
    for (const auto& tb : cfg.tasks) {
        tb.spec.validate();
        if (!ids.insert(tb.spec.task_id).second)
            throw ConfigError("config: duplicate task_id " + tb.spec.task_id);
    }
    cfg.encoder.validate();
    cfg.trainer.validate();
    return cfg;
}

// Reads and parses a config file. Relative data paths are resolved against
// the config file's directory, and every referenced path must exist now,
// not when training happens to reach it.
inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    RunConfig cfg = parse_run_config(text);

    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    for (auto& tb : cfg.tasks) {
        if (tb.synthetic) continue;
        for (std::string* p : {&tb.train_path, &tb.test_path}) {
            std::filesystem::path resolved(*p);
            if (resolved.is_relative()) resolved = base / resolved;
            if (!std::filesystem::exists(resolved))
                throw ConfigError("config: task " + tb.spec.task_id + ": data path " +
                                  resolved.string() + " does not exist");
            *p = resolved.string();
        }
    }
    return cfg;
}

// ----------------------------------------------------------- world assembly

// all datasets of a run, realized; parallel to RunConfig::tasks
struct TaskDataSet {
    TaskData train;
    TaskData test;
};

inline TaskDataSet realize_task(const TaskBinding& tb) {
    TaskDataSet ds;
    if (tb.synthetic) {
        SynthTask st = synth_task(tb.spec.kind, tb.synth_seed, tb.n_train, tb.n_test,
                                  tb.pool_size);
        ds.train = std::move(st.train);
        ds.test = std::move(st.test);
        return ds;
    }
    auto slurp = [](const std::string& p) {
        std::ifstream in(p);
        if (!in) throw IoError("cannot open " + p);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    ds.train.kind = ds.test.kind = tb.spec.kind;
    if (tb.spec.kind == HeadKind::ner) {
        ds.train.ner = parse_conll(slurp(tb.train_path));
        ds.test.ner = parse_conll(slurp(tb.test_path));
    } else {
        ds.train.pairs = parse_pairs(slurp(tb.train_path), tb.spec.kind, tb.spec.labels);
        ds.test.pairs = parse_pairs(slurp(tb.test_path), tb.spec.kind, tb.spec.labels);
    }
    return ds;
}

inline std::string task_corpus(const TaskData& data) {
    std::string out;
    if (data.kind == HeadKind::ner) {
        for (const auto& ex : data.ner) {
            out += ex.text();
            out += '\n';
        }
    } else {
        for (const auto& ex : data.pairs) {
            out += ex.text_a;
            out += ' ';
            out += ex.text_b;
            out += '\n';
        }
    }
    return out;
}

struct RunWorld {
    Vocab vocab;
    std::vector<TaskDataSet> data;
};

// Realizes every dataset and builds the vocabulary from the concatenated
// training text, in registry order. Identical configs give identical worlds.
inline RunWorld build_world(const RunConfig& cfg) {
    RunWorld w;
    std::string corpus;
    for (const auto& tb : cfg.tasks) {
        w.data.push_back(realize_task(tb));
        corpus += task_corpus(w.data.back().train);
    }
    w.vocab = Vocab::build(corpus, cfg.vocab_target);
    if (w.vocab.size() > cfg.encoder.vocab_size)
        throw ConfigError("config: built vocabulary has " + std::to_string(w.vocab.size()) +
                          " entries but encoder.vocab_size is " +
                          std::to_string(cfg.encoder.vocab_size));
    return w;
}

// a trainer wired to the world; the world must outlive the trainer
inline Trainer build_trainer(const RunConfig& cfg, const RunWorld& world) {
    Trainer tr(cfg.encoder, cfg.trainer, &world.vocab);
    for (size_t i = 0; i < cfg.tasks.size(); ++i)
        tr.add_task(cfg.tasks[i].spec, world.data[i].train, world.data[i].test);
    tr.finalize();
    return tr;
}

}  // namespace mtenc
