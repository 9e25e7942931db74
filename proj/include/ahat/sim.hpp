#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "ahat/ir.hpp"
#include "ahat/radical.hpp"

namespace ahat {

// exactness or certification violation: these abort the run
struct sim_error : std::runtime_error {
  explicit sim_error(const std::string& what) : std::runtime_error(what) {}
};

// unit-norm hash vector <x,1,-x,-1>/sqrt(2x^2+2)
std::array<radical_sum, 4> hash_of(const Rat& x);
Rat hash_decode_rat(const std::array<radical_sum, 4>& h);  // throws on the zero vector

// L2-normalize; zero maps to zero; irrational squared norm aborts
std::vector<radical_sum> normalize_exact(const std::vector<radical_sum>& v);

struct tie_info {
  std::vector<int> positions;  // 0-based context offsets
  bool singleton = false;      // otherwise certified by shared keys on the query support
};

// exact argmax averaging; throws sim_error when the tie is not certifiable
std::pair<std::vector<radical_sum>, tie_info> ahat_argmax_average(
    const std::vector<radical_sum>& query,
    const std::vector<std::vector<radical_sum>>& keys,
    const std::vector<std::vector<radical_sum>>& values);

// direct gadget semantics on one token's inputs; domain faults throw std::domain_error
std::vector<radical_sum> apply_gadget(const gadget_sublayer& g,
                                      const std::vector<radical_sum>& inputs);

struct run_stats {
  long normalizations = 0;
  long ties_observed = 0;       // argmax sets computed (cache hits included)
  long multi_ties = 0;          // certified non-singleton ties
  long gadget_faults = 0;       // totalized per-token domain faults (update suppressed)
  long cache_hits = 0;
  long cache_misses = 0;
};

struct head_trace {
  std::vector<int> tie;  // 1-based sequence positions
  bool singleton = false;
};

struct trace_record {
  int block = 0;  // 0 setup, 1 body, 2 readout
  int sublayer = 0;
  long iteration = 0;  // body iteration, 1-based; 0 for setup, R+1 for readout
  int position = 0;    // 1-based
  std::vector<std::pair<int, std::string>> channels;
  std::vector<head_trace> heads;
};

std::string render_trace_record(const trace_record& r);

struct run_options {
  bool capture_trace = false;
  std::vector<int> trace_channels;
  bool strict_sublayers = false;  // reject idealized gadget sublayers
  long unroll_override = -1;      // body iteration count override when >= 0
};

struct run_result {
  bool decision = false;
  int argmax_index = -1;  // argmax readout only
  long total_length = 0;
  long iterations = 0;
  std::vector<std::vector<radical_sum>> residuals;  // [position][channel], final state
  run_stats stats;
  std::vector<trace_record> trace;
};

run_result run_ir(const transformer_ir& t, const std::string& word,
                  const run_options& opts = {});

}  // namespace ahat
