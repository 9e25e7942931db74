#include "ahat/builder.hpp"

#include <stdexcept>

namespace ahat {

int channel_plan::add(const std::string& name, int len) {
  if (len < 1) throw std::logic_error("plan: channel run must be nonempty");
  if (slots_.count(name)) throw std::logic_error("plan: duplicate channel '" + name + "'");
  slots_[name] = {next_, len};
  int base = next_;
  next_ += len;
  return base;
}

int channel_plan::get(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::logic_error("plan: unknown channel '" + name + "'");
  return it->second.first;
}

int channel_plan::length(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::logic_error("plan: unknown channel '" + name + "'");
  return it->second.second;
}

bool channel_plan::has(const std::string& name) const { return slots_.count(name) > 0; }

void channel_plan::pad_to(int target) {
  if (target < next_) throw std::logic_error("plan: cannot shrink width");
  next_ = target;
}

long next_pow2(long n) {
  long p = 1;
  while (p < n) p <<= 1;
  return p;
}

bool is_perfect_square(long n) {
  if (n < 0) return false;
  long r = 0;
  while (r * r < n) ++r;
  return r * r == n;
}

long pad_read_square(std::vector<int>& read, int one_channel, long base_norm2,
                     int min_ones) {
  long total = base_norm2 + min_ones;
  int extra = min_ones;
  while (!is_perfect_square(total)) {
    ++total;
    ++extra;
  }
  for (int i = 0; i < extra; ++i) read.push_back(one_channel);
  long r = 0;
  while (r * r < total) ++r;
  return r;
}

ff_sublayer make_ff_shell(std::vector<int> read, int width) {
  ff_sublayer ff;
  ff.up = sparse_matrix(0, static_cast<int>(read.size()));
  ff.down = sparse_matrix(width, 0);
  ff.read = std::move(read);
  return ff;
}

void add_ff_unit(ff_sublayer& ff, const std::vector<std::pair<int, Rat>>& up_row,
                 const std::vector<std::pair<int, Rat>>& down_col) {
  int unit = ff.up.rows;
  ff.up.rows += 1;
  ff.down.cols += 1;
  for (const auto& [pos, v] : up_row) ff.up.set(unit, pos, ff.up.at(unit, pos) + v);
  for (const auto& [ch, v] : down_col) ff.down.set(ch, unit, ff.down.at(ch, unit) + v);
}

ff_sublayer make_seed(const std::vector<std::pair<int, Rat>>& writes, int one_channel,
                      int width) {
  ff_sublayer ff = make_ff_shell({one_channel}, width);
  add_ff_unit(ff, {{0, Rat(1)}}, writes);
  return ff;
}

Rat sign_threshold_seed(sign_test test) {
  return test == sign_test::positive ? Rat(-1) : Rat(1);
}

ff_sublayer make_sign_threshold(int value_channel, int target_channel, sign_test test,
                                int width) {
  // the read is one channel, so its normalization is exactly the sign
  ff_sublayer ff = make_ff_shell({value_channel}, width);
  switch (test) {
    case sign_test::nonneg:  // seeded +1; a negative sign retracts it
      add_ff_unit(ff, {{0, Rat(-1)}}, {{target_channel, Rat(-2)}});
      break;
    case sign_test::positive:  // seeded -1; a positive sign promotes it
      add_ff_unit(ff, {{0, Rat(1)}}, {{target_channel, Rat(2)}});
      break;
    case sign_test::zero:  // seeded +1; any nonzero sign retracts it
      add_ff_unit(ff, {{0, Rat(1)}}, {{target_channel, Rat(-2)}});
      add_ff_unit(ff, {{0, Rat(-1)}}, {{target_channel, Rat(-2)}});
      break;
  }
  return ff;
}

ff_sublayer make_gated_copies(std::vector<int> read, const Rat& rho, int one_pos,
                              const std::vector<gated_copy>& copies, int width) {
  ff_sublayer ff = make_ff_shell(std::move(read), width);
  for (const auto& c : copies) {
    Rat g = c.gate_negated ? -2 * rho : 2 * rho;
    // relu(x + 2f - 2) - relu(-x + 2f - 2) equals x when the gate is active
    // and 0 otherwise (sources bounded by 2)
    add_ff_unit(ff, {{c.src_pos, rho}, {c.gate_pos, g}, {one_pos, -2 * rho}},
                {{c.dst_channel, c.scale}});
    add_ff_unit(ff, {{c.src_pos, -rho}, {c.gate_pos, g}, {one_pos, -2 * rho}},
                {{c.dst_channel, -c.scale}});
  }
  return ff;
}

ff_sublayer make_pattern_ff(const std::vector<int>& inputs, int one_channel, int width,
                            const std::function<pattern_writes(const std::vector<int>&)>& f) {
  int r = static_cast<int>(inputs.size());
  if (r < 1 || r > 16) throw std::logic_error("pattern table: 1..16 inputs supported");
  std::vector<int> read = inputs;
  long rho = pad_read_square(read, one_channel, r, 1);
  int one_pos = r;  // first padded slot
  ff_sublayer ff = make_ff_shell(read, width);
  std::vector<int> pattern(static_cast<std::size_t>(r));
  for (long mask = 0; mask < (1L << r); ++mask) {
    for (int i = 0; i < r; ++i) pattern[static_cast<std::size_t>(i)] = (mask >> i) & 1 ? 1 : -1;
    pattern_writes writes = f(pattern);
    if (writes.empty()) continue;
    std::vector<std::pair<int, Rat>> up;
    for (int i = 0; i < r; ++i)
      up.emplace_back(i, Rat(pattern[static_cast<std::size_t>(i)]) * rho);
    if (r > 1) up.emplace_back(one_pos, Rat(-(r - 1)) * rho);
    add_ff_unit(ff, up, writes);
  }
  return ff;
}

gadget_sublayer make_gadget_layer(gadget_kind kind, std::vector<int> read,
                                  std::vector<int> out, std::vector<Rat> coeffs,
                                  Rat constant, std::string mode) {
  gadget_sublayer g;
  g.kind = kind;
  g.read = std::move(read);
  g.out = std::move(out);
  g.coeffs = std::move(coeffs);
  g.constant = std::move(constant);
  g.mode = std::move(mode);
  return g;
}

attention_head make_zero_head(mask_kind mask, int score_dim, int head_dim, int read_size) {
  attention_head h;
  h.mask = mask;
  h.wq = sparse_matrix(score_dim, read_size);
  h.wk = sparse_matrix(score_dim, read_size);
  h.wv = sparse_matrix(head_dim, read_size);
  return h;
}

void pad_heads_to(attention_sublayer& att, int target_count) {
  if (att.heads.empty()) throw std::logic_error("attention: no heads to pad from");
  const attention_head model = att.heads.back();
  while (static_cast<int>(att.heads.size()) < target_count)
    att.heads.push_back(
        make_zero_head(model.mask, model.wq.rows, model.wv.rows, model.wv.cols));
}

void set_wo(attention_sublayer& att, int width, const std::vector<wo_write>& writes) {
  int h = static_cast<int>(att.heads.size());
  if (h == 0 || width % h != 0) throw std::logic_error("attention: heads must divide width");
  int head_dim = width / h;
  att.wo = sparse_matrix(width, h * head_dim);
  for (const auto& w : writes) {
    int col = w.head * head_dim + w.row;
    att.wo.set(w.channel, col, att.wo.at(w.channel, col) + w.scale);
  }
}

}  // namespace ahat
