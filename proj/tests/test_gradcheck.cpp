#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <string>
#include <vector>

#include "mtenc/gradcheck_suite.hpp"

using namespace mtenc;

namespace {

// the fault hook is process-global state; keep it scoped to one test block
struct CorruptGuard {
    explicit CorruptGuard(const std::string& op) { Tape::corrupt_op() = op; }
    ~CorruptGuard() { Tape::corrupt_op().clear(); }
};

}  // namespace

TEST_CASE("every primitive and composed loss passes the derivative check",
          "[gradcheck]") {
    const GradCheckReport report = run_gradcheck(/*seed=*/0);
    REQUIRE(report.checks.size() == gradcheck_names().size());
    REQUIRE(report.all_pass());
    for (size_t i = 0; i < report.checks.size(); ++i) {
        INFO(report.checks[i].name << " err " << report.checks[i].max_rel_err);
        REQUIRE(report.checks[i].name == gradcheck_names()[i]);
        REQUIRE(report.checks[i].max_rel_err < 1e-4);
    }
}

TEST_CASE("derivative check errors are reproducible bitwise", "[gradcheck]") {
    const GradCheckReport a = run_gradcheck(/*seed=*/3);
    const GradCheckReport b = run_gradcheck(/*seed=*/3);
    REQUIRE(a.checks.size() == b.checks.size());
    for (size_t i = 0; i < a.checks.size(); ++i)
        REQUIRE(std::memcmp(&a.checks[i].max_rel_err, &b.checks[i].max_rel_err,
                            sizeof(double)) == 0);
}

TEST_CASE("a corrupted backward rule fails its own check and no other",
          "[gradcheck]") {
    CorruptGuard guard("softmax");
    const GradCheckReport report = run_gradcheck({"matmul", "softmax", "gelu"}, 0);
    REQUIRE(report.checks[0].pass);        // matmul unaffected
    REQUIRE_FALSE(report.checks[1].pass);  // softmax flagged
    REQUIRE(report.checks[2].pass);        // gelu unaffected
    REQUIRE_FALSE(report.all_pass());
}

TEST_CASE("composed losses catch corruption inside the encoder", "[gradcheck]") {
    CorruptGuard guard("layer_norm");
    const GradCheckReport report = run_gradcheck({"ner_loss"}, 0);
    REQUIRE_FALSE(report.checks[0].pass);
}

TEST_CASE("the op list is validated before any check runs", "[gradcheck]") {
    REQUIRE_THROWS_AS(run_gradcheck(std::vector<std::string>{}, 0), ConfigError);
    REQUIRE_THROWS_AS(run_gradcheck({"matmul", "no_such_op"}, 0), ConfigError);
}

TEST_CASE("a subset request runs exactly the named checks in order", "[gradcheck]") {
    const GradCheckReport report = run_gradcheck({"mse", "gelu"}, 1);
    REQUIRE(report.checks.size() == 2);
    REQUIRE(report.checks[0].name == "mse");
    REQUIRE(report.checks[1].name == "gelu");
    REQUIRE(report.all_pass());
}
