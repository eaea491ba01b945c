#pragma once

// Per-op gradient-check harness shared by the unit tests and the acceptance
// suite: every differentiable tape op gets a seeded random instance whose
// recorded gradient is compared against central finite differences.

#include <functional>
#include <string>
#include <vector>

#include "finite_diff.hpp"
#include "pathmem/rng.hpp"
#include "pathmem/tape.hpp"

namespace pathmem::testing {

struct OpCase {
    std::string name;
    std::vector<DenseArray> inputs;
    // Builds the op output from leaf vars, in a fresh tape.
    std::function<Var(Tape&, const std::vector<Var>&)> build;
};

inline DenseArray random_array(RngStream& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    DenseArray a(std::move(shape));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
    return a;
}

inline std::vector<OpCase> make_op_cases(std::uint64_t seed) {
    RngStream rng(seed);
    std::vector<OpCase> cases;

    cases.push_back({"matmul", {random_array(rng, {5, 7}), random_array(rng, {7, 3})},
                     [](Tape& t, const std::vector<Var>& in) { return t.matmul(in[0], in[1]); }});
    cases.push_back({"transpose", {random_array(rng, {4, 6})},
                     [](Tape& t, const std::vector<Var>& in) { return t.transpose(in[0]); }});
    cases.push_back({"add", {random_array(rng, {4, 6}), random_array(rng, {4, 6})},
                     [](Tape& t, const std::vector<Var>& in) { return t.add(in[0], in[1]); }});
    cases.push_back({"sub", {random_array(rng, {4, 6}), random_array(rng, {4, 6})},
                     [](Tape& t, const std::vector<Var>& in) { return t.sub(in[0], in[1]); }});
    cases.push_back({"mul", {random_array(rng, {4, 6}), random_array(rng, {4, 6})},
                     [](Tape& t, const std::vector<Var>& in) { return t.mul(in[0], in[1]); }});
    cases.push_back({"add_broadcast", {random_array(rng, {5, 4}), random_array(rng, {4})},
                     [](Tape& t, const std::vector<Var>& in) { return t.add(in[0], in[1]); }});
    cases.push_back({"sub_broadcast", {random_array(rng, {5, 4}), random_array(rng, {4})},
                     [](Tape& t, const std::vector<Var>& in) { return t.sub(in[0], in[1]); }});
    cases.push_back({"mul_broadcast", {random_array(rng, {5, 4}), random_array(rng, {4})},
                     [](Tape& t, const std::vector<Var>& in) { return t.mul(in[0], in[1]); }});
    cases.push_back({"axpb", {random_array(rng, {3, 5})},
                     [](Tape& t, const std::vector<Var>& in) { return t.axpb(in[0], -1.7, 0.4); }});
    cases.push_back({"sigmoid", {random_array(rng, {4, 5}, -4.0, 4.0)},
                     [](Tape& t, const std::vector<Var>& in) { return t.sigmoid(in[0]); }});
    cases.push_back({"relu", {random_array(rng, {4, 5}, -2.0, 2.0)},
                     [](Tape& t, const std::vector<Var>& in) { return t.relu(in[0]); }});
    cases.push_back({"log", {random_array(rng, {4, 5}, 0.05, 3.0)},
                     [](Tape& t, const std::vector<Var>& in) { return t.log(in[0]); }});
    cases.push_back({"sqrt", {random_array(rng, {4, 5}, 0.05, 3.0)},
                     [](Tape& t, const std::vector<Var>& in) { return t.sqrt(in[0]); }});
    cases.push_back({"clamp", {random_array(rng, {4, 5}, -2.0, 2.0)},
                     [](Tape& t, const std::vector<Var>& in) { return t.clamp(in[0], -0.8, 0.8); }});
    cases.push_back(
        {"layer_norm",
         {random_array(rng, {3, 8}), random_array(rng, {8}, 0.5, 1.5), random_array(rng, {8})},
         [](Tape& t, const std::vector<Var>& in) { return t.layer_norm(in[0], in[1], in[2]); }});

    // Segment layout: 7 messages over 4 segments, one segment left empty, one
    // a singleton.
    const std::vector<std::uint32_t> seg{0, 0, 2, 2, 2, 3, 0};
    for (SegmentOp op : {SegmentOp::sum, SegmentOp::mean, SegmentOp::max, SegmentOp::min,
                         SegmentOp::std_dev}) {
        const char* names[] = {"segment_sum", "segment_mean", "segment_max", "segment_min",
                               "segment_std"};
        cases.push_back({names[static_cast<int>(op)], {random_array(rng, {7, 3})},
                         [op, seg](Tape& t, const std::vector<Var>& in) {
                             return t.segment_reduce(op, in[0], seg, 4);
                         }});
    }

    cases.push_back({"gather_rows", {random_array(rng, {6, 4})},
                     [](Tape& t, const std::vector<Var>& in) {
                         return t.gather_rows(in[0], {0, 5, 2, 2, 1});
                     }});
    cases.push_back({"scatter_rows", {random_array(rng, {3, 4})},
                     [](Tape& t, const std::vector<Var>& in) {
                         return t.scatter_rows(in[0], {4, 0, 2}, 6);
                     }});
    cases.push_back({"row_scale", {random_array(rng, {5, 3})},
                     [](Tape& t, const std::vector<Var>& in) {
                         return t.row_scale(in[0], {0.0, 1.0, -2.0, 0.5, 3.0});
                     }});
    cases.push_back({"concat_rows", {random_array(rng, {2, 3}), random_array(rng, {4, 3})},
                     [](Tape& t, const std::vector<Var>& in) {
                         return t.concat_rows({in[0], in[1]});
                     }});
    cases.push_back({"concat_cols", {random_array(rng, {3, 2}), random_array(rng, {3, 5})},
                     [](Tape& t, const std::vector<Var>& in) {
                         return t.concat_cols({in[0], in[1]});
                     }});
    cases.push_back({"reduce_sum", {random_array(rng, {4, 3})},
                     [](Tape& t, const std::vector<Var>& in) { return t.reduce_sum(in[0]); }});
    cases.push_back({"reduce_mean", {random_array(rng, {4, 3})},
                     [](Tape& t, const std::vector<Var>& in) { return t.reduce_mean(in[0]); }});
    cases.push_back({"complex_rotate",
                     {random_array(rng, {3, 6}), random_array(rng, {3, 6}, 0.2, 1.5)},
                     [](Tape& t, const std::vector<Var>& in) {
                         return t.complex_rotate(in[0], in[1]);
                     }});
    return cases;
}

// Max relative error between the tape gradient and central finite differences,
// over all inputs of the case. The loss is a fixed random weighting of the op
// output so every output element receives a distinct adjoint.
inline double check_op_gradients(const OpCase& c, std::uint64_t weight_seed) {
    auto run = [&](const std::vector<DenseArray>& inputs, std::vector<std::vector<double>>* grads_out) {
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(inputs.size());
        for (const DenseArray& in : inputs) vars.push_back(tape.leaf(in));
        Var out = c.build(tape, vars);
        RngStream wrng(weight_seed);
        DenseArray weights = random_array(wrng, tape.value(out).shape(), -1.0, 1.0);
        Var loss = tape.reduce_sum(tape.mul(out, tape.constant(std::move(weights))));
        const double value = tape.value(loss)[0];
        if (grads_out) {
            tape.backward(loss);
            grads_out->clear();
            for (Var v : vars) grads_out->push_back(tape.grad(v).values());
        }
        return value;
    };

    std::vector<std::vector<double>> ad_grads;
    run(c.inputs, &ad_grads);

    double worst = 0.0;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        std::vector<DenseArray> perturbed = c.inputs;
        auto fd = finite_diff_gradient(
            [&](const DenseArray& x) {
                perturbed[i] = x;
                return run(perturbed, nullptr);
            },
            c.inputs[i]);
        worst = std::max(worst, max_relative_error(ad_grads[i], fd));
    }
    return worst;
}

}  // namespace pathmem::testing
