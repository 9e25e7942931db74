#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ahat/ir.hpp"

namespace ahat {

// named residual-channel layout built incrementally
struct channel_plan {
  // returns the base index of a fresh run of `len` channels
  int add(const std::string& name, int len = 1);
  int get(const std::string& name) const;
  int length(const std::string& name) const;
  bool has(const std::string& name) const;
  int width() const { return next_; }
  void pad_to(int target);  // reserve unnamed spare channels
  // name -> (base, length), for serialization and layout audits
  const std::map<std::string, std::pair<int, int>>& slots() const { return slots_; }

 private:
  std::map<std::string, std::pair<int, int>> slots_;
  int next_ = 0;
};

long next_pow2(long n);
bool is_perfect_square(long n);

// appends copies of the one-channel until base_norm2 + added is a perfect
// square (with at least min_ones copies); returns the square root
long pad_read_square(std::vector<int>& read, int one_channel, long base_norm2,
                     int min_ones = 0);

// feedforward scaffolding: a shell has no hidden units; units are appended
// with up-row entries addressed by read position and down entries by channel
ff_sublayer make_ff_shell(std::vector<int> read, int width);
void add_ff_unit(ff_sublayer& ff, const std::vector<std::pair<int, Rat>>& up_row,
                 const std::vector<std::pair<int, Rat>>& down_col);

// adds the given constants to channels wherever the one-channel holds 1
ff_sublayer make_seed(const std::vector<std::pair<int, Rat>>& writes, int one_channel,
                      int width);

// sign tests materialized into a pre-seeded +-1 target channel
enum class sign_test { nonneg, positive, zero };
Rat sign_threshold_seed(sign_test test);
ff_sublayer make_sign_threshold(int value_channel, int target_channel, sign_test test,
                                int width);

// dst += scale * src when the +-1 gate is active (equal to +1, or -1 when
// negated); inactive or unwritten gates contribute exactly zero. Sources are
// addressed by read position and must stay within magnitude 2.
struct gated_copy {
  int src_pos;
  int gate_pos;
  int dst_channel;
  Rat scale = Rat(1);
  bool gate_negated = false;
};
ff_sublayer make_gated_copies(std::vector<int> read, const Rat& rho, int one_pos,
                              const std::vector<gated_copy>& copies, int width);

// exact lookup table over +-1 inputs: adds f(pattern) to the returned
// channels; any 0-valued input suppresses every pattern
using pattern_writes = std::vector<std::pair<int, Rat>>;
ff_sublayer make_pattern_ff(const std::vector<int>& inputs, int one_channel, int width,
                            const std::function<pattern_writes(const std::vector<int>&)>& f);

gadget_sublayer make_gadget_layer(gadget_kind kind, std::vector<int> read,
                                  std::vector<int> out, std::vector<Rat> coeffs = {},
                                  Rat constant = Rat(0), std::string mode = "");

// all-zero head: zero query scores everything equally (trivially certified)
// and zero values keep the average at zero
attention_head make_zero_head(mask_kind mask, int score_dim, int head_dim, int read_size);
void pad_heads_to(attention_sublayer& att, int target_count);

struct wo_write {
  int channel;
  int head;
  int row;
  Rat scale = Rat(1);
};
void set_wo(attention_sublayer& att, int width, const std::vector<wo_write>& writes);

}  // namespace ahat
