#pragma once

// Symbolic scorer for the synthetic rule dataset: a candidate scores 1.0 when
// the partner-relation fact one step earlier implies it, 0.0 otherwise. Runs
// through the ordinary evaluation module.

#include <cstdint>
#include <functional>
#include <set>
#include <vector>

#include "pathmem/dataset.hpp"

namespace pathmem::testing {

class RuleOracle {
public:
    explicit RuleOracle(const TkgDataset& augmented)
        : num_entities_(augmented.num_entities), num_base_(augmented.num_base_relations) {
        for (const auto* split : {&augmented.train, &augmented.valid, &augmented.test})
            for (const Quadruple& q : *split) facts_.insert(q);
    }

    std::vector<double> operator()(std::uint32_t subject, std::uint32_t relation,
                                   std::uint32_t t_q) const {
        std::vector<double> scores(num_entities_, 0.0);
        if (t_q == 0) return scores;
        const std::uint32_t partner = partner_relation(relation);
        for (std::uint32_t o = 0; o < num_entities_; ++o)
            if (facts_.count(Quadruple{subject, partner, o, t_q - 1})) scores[o] = 1.0;
        return scores;
    }

private:
    // The alternating rule swaps relation 0 and 1, preserving direction.
    std::uint32_t partner_relation(std::uint32_t rel) const {
        const bool inverse = rel >= num_base_;
        const std::uint32_t base = inverse ? rel - static_cast<std::uint32_t>(num_base_) : rel;
        const std::uint32_t partner_base = base == 0 ? 1u : 0u;
        return inverse ? partner_base + static_cast<std::uint32_t>(num_base_) : partner_base;
    }

    std::size_t num_entities_;
    std::size_t num_base_;
    std::set<Quadruple> facts_;
};

}  // namespace pathmem::testing
