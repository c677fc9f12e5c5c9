#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mtenc/checkpoint.hpp"

using namespace mtenc;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny_encoder() {
    EncoderConfig cfg;
    cfg.num_layers = 1;
    cfg.hidden_dim = 16;
    cfg.num_heads = 2;
    cfg.ffn_dim = 32;
    cfg.vocab_size = 256;
    cfg.max_seq_len = 32;
    return cfg;
}

Vocab pool_vocab(int target = 120) {
    std::string corpus;
    for (int i = 0; i < 140; ++i) corpus += synth::word_for(i) + " ";
    return Vocab::build(corpus, target);
}

struct World {
    Vocab vocab = pool_vocab();
    SynthTask ner = synth_task(HeadKind::ner, 201, 6, 4, 30);
    SynthTask sts = synth_task(HeadKind::sts, 202, 4, 4, 30);
    SynthTask nli = synth_task(HeadKind::nli, 203, 2, 4, 30);
};

Trainer three_task_trainer(const World& w, TrainerConfig cfg) {
    Trainer tr(tiny_encoder(), cfg, &w.vocab);
    tr.add_task(TaskSpec{"tag", HeadKind::ner, w.ner.labels, 2}, w.ner.train, w.ner.test);
    tr.add_task(TaskSpec{"sim", HeadKind::sts, {}, 2}, w.sts.train, w.sts.test);
    tr.add_task(TaskSpec{"inf", HeadKind::nli, w.nli.labels, 2}, w.nli.train, w.nli.test);
    tr.finalize();
    return tr;
}

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "mtenc-checkpoint-tests";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    REQUIRE(out.good());
}

// field-wise record equality, loss compared bitwise
void require_same_records(const TrainRecord& a, const TrainRecord& b) {
    REQUIRE(a.outer == b.outer);
    REQUIRE(a.iteration == b.iteration);
    REQUIRE(a.task_id == b.task_id);
    REQUIRE(a.batch_index == b.batch_index);
    REQUIRE(std::memcmp(&a.loss, &b.loss, sizeof(double)) == 0);
    REQUIRE(a.wraps == b.wraps);
}

}  // namespace

TEST_CASE("identical states serialize to identical bytes of the stated size",
          "[checkpoint]") {
    World w;
    TrainerConfig cfg;
    cfg.seed = 11;
    Trainer tr = three_task_trainer(w, cfg);
    TrainLog log;
    for (int i = 0; i < 3; ++i) tr.step(log);

    const CheckpointState st = capture(tr);
    const std::string b1 = checkpoint_bytes(st);
    const std::string b2 = checkpoint_bytes(capture(tr));
    REQUIRE(b1 == b2);
    REQUIRE(checkpoint_size(st) == b1.size());

    const fs::path dir = scratch_dir();
    const fs::path path = dir / "state.ckpt";
    save_checkpoint(st, path.string());
    save_checkpoint(st, path.string());  // overwrite in place
    REQUIRE(fs::file_size(path) == b1.size());
    REQUIRE(slurp(path) == b1);
    REQUIRE_FALSE(fs::exists(dir / "state.ckpt.tmp"));
}

TEST_CASE("parsing serialized bytes reproduces the bytes exactly", "[checkpoint]") {
    World w;
    TrainerConfig cfg;
    cfg.seed = 12;
    cfg.optimizer = Optimizer::adam;
    cfg.alpha = 1e-3;
    Trainer tr = three_task_trainer(w, cfg);
    TrainLog log;
    for (int i = 0; i < 5; ++i) tr.step(log);

    const std::string b1 = checkpoint_bytes(capture(tr));
    const CheckpointState reparsed = parse_checkpoint(b1);
    REQUIRE(checkpoint_bytes(reparsed) == b1);

    // spot-check the decoded state against the live trainer
    REQUIRE(reparsed.global_step == 5);
    REQUIRE(reparsed.tasks.size() == 3);
    REQUIRE(reparsed.tasks[1].task_id == "sim");
    REQUIRE(reparsed.tcfg.optimizer == Optimizer::adam);
    REQUIRE(reparsed.adam.size() > 0);
    REQUIRE(reparsed.sampler_state == tr.sampler().state());
}

TEST_CASE("tensor payloads survive the file round trip bitwise", "[checkpoint]") {
    World w;
    TrainerConfig cfg;
    cfg.seed = 13;
    Trainer tr = three_task_trainer(w, cfg);

    // plant values whose bit patterns round-trips must preserve exactly
    auto params = tr.named_params();
    (*params[0].second->data)[0] = -0.0;
    (*params[0].second->data)[1] = 5e-324;  // smallest denormal
    (*params[0].second->data)[2] = 0x1.921fb54442d18p+1;

    const fs::path dir = scratch_dir();
    const fs::path path = dir / "bits.ckpt";
    save_checkpoint(capture(tr), path.string());
    const CheckpointState back = load_checkpoint(path.string());

    for (const auto& [name, t] : params) {
        const auto it = back.tensors.find(name);
        REQUIRE(it != back.tensors.end());
        REQUIRE(it->second.shape == t->shape);
        REQUIRE(std::memcmp(it->second.data->data(), t->data->data(),
                            t->data->size() * sizeof(double)) == 0);
    }
    REQUIRE(std::signbit((*back.tensors.at(params[0].first).data)[0]));
}

TEST_CASE("resuming from a file matches the unbroken run bitwise", "[checkpoint]") {
    World w;
    TrainerConfig cfg;
    cfg.seed = 21;
    cfg.optimizer = Optimizer::adam;
    cfg.alpha = 1e-3;
    cfg.schedule = Schedule::proportional;
    cfg.outer_loops = 3;

    const int k = 7;  // split point, mid-loop
    Trainer full = three_task_trainer(w, cfg);
    TrainLog full_log;
    full.run(full_log);
    const int total = static_cast<int>(full_log.records.size());
    REQUIRE(total > k + 3);  // the resumed leg crosses an outer-loop boundary

    Trainer head = three_task_trainer(w, cfg);
    TrainLog head_log;
    for (int i = 0; i < k; ++i) head.step(head_log);
    const fs::path path = scratch_dir() / "resume.ckpt";
    save_checkpoint(capture(head), path.string());

    Trainer tail = three_task_trainer(w, cfg);
    restore(tail, load_checkpoint(path.string()));
    REQUIRE(tail.global_step() == static_cast<uint64_t>(k));
    TrainLog tail_log;
    tail.run(tail_log);

    REQUIRE(static_cast<int>(tail_log.records.size()) == total - k);
    for (int i = k; i < total; ++i)
        require_same_records(full_log.records[i], tail_log.records[i - k]);

    // the whole end state matches, optimizer moments and sampler included
    REQUIRE(checkpoint_bytes(capture(tail)) == checkpoint_bytes(capture(full)));
}

TEST_CASE("round-robin sgd runs resume identically too", "[checkpoint]") {
    World w;
    TrainerConfig cfg;
    cfg.seed = 22;
    cfg.alpha = 1e-3;
    cfg.outer_loops = 2;

    Trainer full = three_task_trainer(w, cfg);
    TrainLog full_log;
    full.run(full_log);

    const int k = 4;
    Trainer head = three_task_trainer(w, cfg);
    TrainLog head_log;
    for (int i = 0; i < k; ++i) head.step(head_log);
    const fs::path path = scratch_dir() / "rr.ckpt";
    save_checkpoint(capture(head), path.string());

    Trainer tail = three_task_trainer(w, cfg);
    restore(tail, load_checkpoint(path.string()));
    TrainLog tail_log;
    tail.run(tail_log);

    const int total = static_cast<int>(full_log.records.size());
    REQUIRE(static_cast<int>(tail_log.records.size()) == total - k);
    for (int i = k; i < total; ++i)
        require_same_records(full_log.records[i], tail_log.records[i - k]);
    REQUIRE(checkpoint_bytes(capture(tail)) == checkpoint_bytes(capture(full)));
}

TEST_CASE("malformed files raise the matching error type", "[checkpoint]") {
    World w;
    TrainerConfig cfg;
    cfg.seed = 31;
    Trainer tr = three_task_trainer(w, cfg);
    TrainLog log;
    tr.step(log);
    const std::string good = checkpoint_bytes(capture(tr));
    const fs::path dir = scratch_dir();

    SECTION("empty or mislabeled file") {
        spit(dir / "empty.ckpt", "");
        REQUIRE_THROWS_AS(load_checkpoint((dir / "empty.ckpt").string()), FormatError);
        std::string bad = good;
        bad[0] = 'X';
        spit(dir / "magic.ckpt", bad);
        REQUIRE_THROWS_AS(load_checkpoint((dir / "magic.ckpt").string()), FormatError);
    }

    SECTION("unknown version") {
        std::string bad = good;
        bad[4] = 2;  // version lives right after the magic
        spit(dir / "version.ckpt", bad);
        REQUIRE_THROWS_AS(load_checkpoint((dir / "version.ckpt").string()), VersionError);
    }

    SECTION("truncation inside a tensor names the tensor") {
        const size_t at = good.find("head.sim.weight");
        REQUIRE(at != std::string::npos);
        for (const size_t cut : {at + 25, at + 40}) {  // inside dims, inside payload
            spit(dir / "cut.ckpt", good.substr(0, cut));
            try {
                load_checkpoint((dir / "cut.ckpt").string());
                FAIL("truncated checkpoint loaded");
            } catch (const CorruptError& e) {
                REQUIRE(std::string(e.what()).find("head.sim.weight") != std::string::npos);
            }
        }
    }

    SECTION("trailing bytes") {
        spit(dir / "tail.ckpt", good + std::string(1, '\0'));
        REQUIRE_THROWS_AS(load_checkpoint((dir / "tail.ckpt").string()), CorruptError);
    }

    SECTION("missing file") {
        REQUIRE_THROWS_AS(load_checkpoint((dir / "absent.ckpt").string()), IoError);
    }
}

TEST_CASE("saving into a missing directory raises an io error", "[checkpoint]") {
    World w;
    TrainerConfig cfg;
    Trainer tr = three_task_trainer(w, cfg);
    const fs::path path = scratch_dir() / "no-such-dir" / "x.ckpt";
    REQUIRE_THROWS_AS(save_checkpoint(capture(tr), path.string()), IoError);
}

TEST_CASE("restore rejects a trainer built from a different registry", "[checkpoint]") {
    World w;
    TrainerConfig cfg;
    cfg.seed = 41;
    Trainer tr = three_task_trainer(w, cfg);
    const CheckpointState st = capture(tr);

    Trainer fewer(tiny_encoder(), cfg, &w.vocab);
    fewer.add_task(TaskSpec{"tag", HeadKind::ner, w.ner.labels, 2}, w.ner.train, w.ner.test);
    fewer.finalize();
    REQUIRE_THROWS_AS(restore(fewer, st), CorruptError);

    Trainer renamed(tiny_encoder(), cfg, &w.vocab);
    renamed.add_task(TaskSpec{"tag", HeadKind::ner, w.ner.labels, 2}, w.ner.train, w.ner.test);
    renamed.add_task(TaskSpec{"other", HeadKind::sts, {}, 2}, w.sts.train, w.sts.test);
    renamed.add_task(TaskSpec{"inf", HeadKind::nli, w.nli.labels, 2}, w.nli.train, w.nli.test);
    renamed.finalize();
    REQUIRE_THROWS_AS(restore(renamed, st), CorruptError);
}
