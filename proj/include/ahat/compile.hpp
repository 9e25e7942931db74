#pragma once

#include <string>
#include <vector>

#include "ahat/builder.hpp"
#include "ahat/formula.hpp"
#include "ahat/ir.hpp"

namespace ahat {

// Translation of a closed counting-logic sentence into an unmasked exact-average
// transformer. The word w (over the given input alphabet) is laid out as
// $ w _^(n^k); the padding token at offset v enumerates the v-th assignment of
// the k variables, carries one hashed base-n digit per variable, and evaluates
// every subformula under that assignment in its own result channels. Quantifiers
// average result values over the padding tokens that agree on the remaining
// digits; exact rational thresholds recover the counting semantics.
struct compiled_artifact {
  transformer_ir transformer;
  channel_plan plan;  // named residual layout, serializable via slots()
  int var_count = 0;  // k: distinct variable names in the compiled sentence
  int node_depth = 0; // syntactic depth of the compiled sentence
};

// Rejects sentences with free variables and sentences using bit atoms; a
// sentence without variables is wrapped in a vacuous existential so the layout
// always carries at least one digit. Every predicate symbol must appear in
// `alphabet` (single-character tokens, none of them reserved).
compiled_artifact compile_formula(const formula& f, const std::string& alphabet);

// 1-based rank of a variable assignment (components in [1, n], least
// significant first) among all n^k assignments, and its inverse
long assignment_index(const std::vector<long>& components, long n);
std::vector<long> assignment_components(long v, long n, int k);

// length of the longest read-after-write chain over all sublayers (setup,
// body once, epilogue); independent sublayers count as one parallel layer
int dependency_depth(const transformer_ir& t);

}  // namespace ahat
