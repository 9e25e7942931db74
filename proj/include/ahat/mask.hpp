#pragma once

#include <string>
#include <vector>

#include "ahat/ir.hpp"

namespace ahat {

// Rewrites a transformer with unmasked (or mixed) attention into a fully
// causal one that reproduces the original's residual stream exactly.  The
// input sequence is mirrored into a staircase of appended blocks, one per
// attention sublayer: block b holds, by the time the b-th attention runs, a
// token-for-token twin of the original sequence, so an unmasked head can read
// its full context out of the previous block while looking only backwards.
struct mask_conversion {
  transformer_ir transformer;
  bool identity = false;          // input was already fully causal
  int converted_sublayers = 0;    // attention sublayers rewritten == appended blocks
  std::vector<long> added_padding;  // extra padding tokens, by power of n
  std::vector<std::string> notes;
};

// Preconditions: the input validates, has no loop, and declares an integral
// positive read norm on every attention sublayer.  Channels that feed
// attention reads must admit a static magnitude bound (decoded integer
// channels do not); otherwise the rewrite cannot separate live blocks from
// stale ones and the call refuses with std::domain_error.
mask_conversion to_causal(const transformer_ir& t);

// Upper bound on |q . k| over unit pre-norm vectors, doubled, with a floor of
// 2: every entry of a normalized read is at most 1 in magnitude, so a score
// dimension contributes at most the product of the L1 norms of its query and
// key rows.
Rat choose_dominance_constant(const transformer_ir& t);

}  // namespace ahat
