#ifndef BRIDGETS_COMPOSITION_HPP
#define BRIDGETS_COMPOSITION_HPP

#include <string>
#include <vector>

#include "bridgets/data.hpp"
#include "bridgets/experts.hpp"

namespace bridgets {

/// N expert estimates stacked along a new third axis, order-significant.
struct PriorStack {
    Array3 values;  // L x C x N
    std::vector<std::string> source_ids;

    int n_priors() const { return values.depth; }
};

/// The training target replicated N times along the stack axis.
struct ReplicatedTarget {
    Array3 values;  // L x C x N, all slices identical
};

/// Stacks estimates in argument order; slice i equals estimate i.
PriorStack stack_priors(const std::vector<PriorEstimate>& estimates);

ReplicatedTarget replicate_target(const TimeSeriesWindow& target, int n);

/// Arithmetic mean over the stack axis.
Array2 fuse_output(const Array3& stacked);

}  // namespace bridgets

#endif  // BRIDGETS_COMPOSITION_HPP
