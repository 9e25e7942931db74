#include "ahat/mask.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "ahat/builder.hpp"
#include "ahat/radical.hpp"
#include "ahat/sim.hpp"

// Conversion strategy: the output sequence holds the original padded sequence
// (block 0) followed by one appended block per rewritten attention sublayer.
// Every position derives its block index b and slot s from its position alone;
// a twin-fetch in the prologue copies the embedding of slot s into each
// appended position. Rewritten sublayer number c updates blocks >= c exactly:
// causal heads keep their own block (slots <= s reproduce the causal prefix),
// unmasked heads target block b-1, which still carries the exact state the
// whole sequence had before this sublayer. Earlier blocks are parked on the
// start position; norm compensation keeps every parked update inside the value
// class the original program already uses, so later exact-norm checks survive.

namespace ahat {
namespace {

using boost::multiprecision::sqrt;

[[noreturn]] void fail(const std::string& msg) { throw std::domain_error("mask: " + msg); }

Rat rat_abs(const Rat& q) { return q < 0 ? Rat(-q) : q; }

std::vector<Rat> row_l1(const sparse_matrix& m) {
  std::vector<Rat> out(m.rows, Rat(0));
  for (const auto& [r, c, v] : m.entries) out[r] += rat_abs(v);
  return out;
}

// smallest integer m >= 0 with m*m >= q
Int ceil_sqrt_rat(const Rat& q) {
  if (q <= 0) return 0;
  Int p = numerator(q), d = denominator(q);
  Int m = sqrt(Int((p + d - 1) / d));
  while (m * m * d < p) ++m;
  return m;
}

// nonnegative rational as a sum of rational squares (greedy, exact)
std::vector<Rat> square_decompose(const Rat& delta) {
  std::vector<Rat> out;
  if (delta <= 0) return out;
  Int q = denominator(delta);
  Int n = numerator(delta) * q;
  while (n > 0) {
    Int s = sqrt(n);
    out.push_back(Rat(s, q));
    n -= s * s;
  }
  return out;
}

sparse_matrix zero_matrix(int rows, int cols) {
  sparse_matrix m;
  m.rows = rows;
  m.cols = cols;
  return m;
}

struct attention_info {
  const attention_sublayer* att = nullptr;
  int heads = 0;
  int head_dim = 0;     // as authored
  int unmasked = 0;     // heads with the unmasked flag
  int causal = 0;
  int groups = 0;       // 1 or 2: which block-query runs the read carries
  long declared = 0;    // declared squared read norm, a positive integer
  long scale = 0;       // value rescale t with t^2*declared = uniform read norm
  long pad_ones = 0;    // extra one-slots equalizing the read norm
  std::vector<int> read_channels;  // distinct channels, for the zero-read flags
};

struct converter {
  const transformer_ir& src;
  bool iol = false;
  bool inv = false;
  int w_e = 0;
  int w_ext = 0;  // source channels plus the locator-pass scratch

  std::vector<long> nppoly;              // per-block length as a polynomial in n
  std::vector<sublayer> synth;           // locator prepass, in source coordinates
  std::vector<const sublayer*> program;  // prepass ++ setup ++ body ++ epilogue
  std::vector<attention_info> atts;
  int lc = 0;

  channel_plan plan;
  int w_copy = 0;  // prefix copied by the twin-fetch
  int w_prov = 0;  // provisional width while building
  int ch_one = 0, ch_bos = 0, ch_inp = 0, ch_zero = 0, ch_comp = -1;
  int comp_len = 0;
  int pp_bos = -1, pp_one = -1, pp_ci = -1, pp_cN = -1, pp_hf = -1;
  int ch_posinv = 0, ch_ncnt = 0, ch_hn = 0, ch_hpos = 0, ch_hpos1 = 0;
  int ch_hN = 0, ch_hb = 0, ch_hs0 = 0, ch_hs = -1, ch_hbm1 = 0, ch_k0 = 0;
  int ch_fst = 0;
  struct per_c {
    int fb = 0, flag = 0, blkq = -1, blkqs = -1, nf = 0;
    int zq = 0, u = 0, czpm = 0, cz = 0, fcmp = -1, fcmp_len = 0;
  };
  std::vector<per_c> pc;

  Int fetch_root = 0;  // r with r^2 the twin-fetch read norm
  std::map<std::string, std::vector<Rat>> comp_values;
  std::map<std::string, std::map<int, Rat>> emb;

  Rat mbar = Rat(0);  // bound < 1 on distinct-block hash agreement

  std::vector<radical_sum> start;  // exact state of position 1, tracked statically
  std::vector<std::pair<int, Rat>> fcmp_writes;
  std::size_t fcmp_slot_index = 0;

  std::vector<sublayer> d_setup, d_body;

  explicit converter(const transformer_ir& t) : src(t) {}

  // ---- tracked state helpers -------------------------------------------

  radical_sum& at(int chan) {
    if (static_cast<int>(start.size()) <= chan) start.resize(chan + 1);
    return start[chan];
  }

  std::vector<radical_sum> gather(const std::vector<int>& read) {
    std::vector<radical_sum> out;
    out.reserve(read.size());
    for (int c : read) out.push_back(at(c));
    return out;
  }

  std::vector<radical_sum> normalize_start(const std::vector<radical_sum>& v) {
    try {
      return normalize_exact(v);
    } catch (const sim_error&) {
      fail("start-position state leaves the exact radical domain");
    }
  }

  void track_ff(const ff_sublayer& ff) {
    auto z = normalize_start(gather(ff.read));
    std::vector<radical_sum> h(ff.up.rows);
    for (const auto& [r, c, v] : ff.up.entries) h[r] += radical_sum(v) * z[c];
    for (auto& x : h)
      if (x.sign() < 0) x = radical_sum();
    for (const auto& [r, c, v] : ff.down.entries) at(r) += radical_sum(v) * h[c];
  }

  void track_gadget(const gadget_sublayer& g) {
    auto ins = gather(g.read);
    try {
      auto outs = apply_gadget(g, ins);
      for (std::size_t i = 0; i < g.out.size(); ++i) at(g.out[i]) += outs[i];
    } catch (const std::domain_error&) {
      // same totalization the interpreter applies: faulted gadgets write nothing
    }
  }

  void track_positionwise(const sublayer& s) {
    if (std::holds_alternative<ff_sublayer>(s))
      track_ff(std::get<ff_sublayer>(s));
    else if (std::holds_alternative<gadget_sublayer>(s))
      track_gadget(std::get<gadget_sublayer>(s));
  }

  // ---- program assembly ------------------------------------------------

  void build_block_poly() {
    // block length n' = 1 + n + padding(n): start marker, word, then blanks
    const auto& p = src.padding_coeffs;
    nppoly.assign(std::max<std::size_t>(2, p.size()), 0);
    nppoly[0] = 1 + (p.size() > 0 ? p[0] : 0);
    nppoly[1] = 1 + (p.size() > 1 ? p[1] : 0);
    for (std::size_t j = 2; j < p.size(); ++j) nppoly[j] = p[j];
  }

  void build_prepass() {
    if (!iol) return;
    // locator pass: causal and unmasked averages of the start-marker indicator
    // recover 1/slot and 1/length; their ratio is hashed and decoded into the
    // position channel
    attention_sublayer a;
    a.read = {pp_bos, pp_one, pp_one, pp_one};
    a.read_norm2 = Rat(4);
    for (int h = 0; h < 2; ++h) {
      attention_head head;
      head.mask = h == 0 ? mask_kind::causal : mask_kind::unmasked;
      head.wq = zero_matrix(1, 4);
      head.wk = zero_matrix(1, 4);
      head.wv = zero_matrix(1, 4);
      head.wv.set(0, 0, Rat(1));
      head.wv.set(0, 1, Rat(1));
      a.heads.push_back(std::move(head));
    }
    a.wo = zero_matrix(w_ext, 2);
    a.wo.set(pp_ci, 0, Rat(1));
    a.wo.set(pp_cN, 1, Rat(1));
    synth.emplace_back(std::move(a));
    synth.emplace_back(make_gadget_layer(gadget_kind::ln_hash, {pp_cN, pp_ci},
                                         {pp_hf, pp_hf + 1, pp_hf + 2, pp_hf + 3}));
    synth.emplace_back(make_gadget_layer(gadget_kind::hash_decode,
                                         {pp_hf, pp_hf + 1, pp_hf + 2, pp_hf + 3},
                                         {src.pos_channel}, {}, Rat(0), "value"));
  }

  void build_program() {
    synth.reserve(3);
    build_prepass();
    for (const auto& s : synth) program.push_back(&s);
    for (const auto& s : src.setup) program.push_back(&s);
    for (const auto& s : src.body) program.push_back(&s);
    for (const auto& s : src.epilogue) program.push_back(&s);
  }

  void scan_attentions() {
    for (const auto* s : program) {
      if (!std::holds_alternative<attention_sublayer>(*s)) continue;
      const auto& a = std::get<attention_sublayer>(*s);
      attention_info info;
      info.att = &a;
      info.heads = static_cast<int>(a.heads.size());
      info.head_dim = a.heads.empty() ? 0 : a.heads[0].wv.rows;
      for (const auto& h : a.heads)
        (h.mask == mask_kind::unmasked ? info.unmasked : info.causal)++;
      info.groups = (info.unmasked ? 1 : 0) + (info.causal ? 1 : 0);
      if (!a.read_norm2) fail("attention sublayer lacks a declared read norm");
      if (denominator(*a.read_norm2) != 1)
        fail("declared attention read norms must be integers");
      info.declared = static_cast<long>(numerator(*a.read_norm2));
      info.scale = info.declared >= 2 ? 2 : 3;
      // uniform rewritten read norm: declared + groups + block hash + parked
      // flag + first flag + one + pads = scale^2 * declared
      info.pad_ones =
          (info.scale * info.scale - 1) * info.declared - info.groups - 3;
      std::set<int> chans(a.read.begin(), a.read.end());
      info.read_channels.assign(chans.begin(), chans.end());
      atts.push_back(std::move(info));
    }
    lc = static_cast<int>(atts.size());
  }

  // ---- layout ----------------------------------------------------------

  void build_embedding() {
    emb = src.embedding;
    // appended blocks are blank-filled and anchored on the start marker, so
    // both tokens must exist even when the source alphabet omits them
    std::vector<std::string> toks = src.alphabet;
    bool blank_listed = false, bos_listed = false;
    for (const auto& tok : toks) {
      blank_listed |= tok == kBlankToken;
      bos_listed |= tok == kBosToken;
    }
    if (!blank_listed) toks.push_back(kBlankToken);
    if (!bos_listed) toks.push_back(kBosToken);
    for (const auto& tok : toks) {
      auto& row = emb[tok];
      row[ch_one] = Rat(1);
      if (tok == kBosToken) row[ch_bos] = Rat(1);
      if (tok != kBosToken && tok != kBlankToken) row[ch_inp] = Rat(1);
      if (iol) {
        row[pp_bos] = tok == kBosToken ? Rat(1) : Rat(-1);
        row[pp_one] = Rat(1);
      }
    }
    // equalize embedding norms so the twin-fetch read norm is declarable
    Rat maxq(0);
    std::map<std::string, Rat> qtok;
    for (const auto& tok : toks) {
      Rat q(0);
      for (const auto& [c, v] : emb[tok]) q += v * v;
      qtok[tok] = q;
      maxq = std::max(maxq, q);
    }
    fetch_root = ceil_sqrt_rat(maxq + 3);
    Rat target = Rat(fetch_root * fetch_root) - 3;
    comp_len = 0;
    for (const auto& tok : toks) {
      comp_values[tok] = square_decompose(target - qtok[tok]);
      comp_len = std::max(comp_len, static_cast<int>(comp_values[tok].size()));
    }
  }

  void layout() {
    plan.add("state", w_e);
    if (iol) {
      pp_bos = plan.add("loc_start", 1);
      pp_one = plan.add("loc_one", 1);
      pp_ci = plan.add("loc_causal", 1);
      pp_cN = plan.add("loc_full", 1);
      pp_hf = plan.add("loc_hash", 4);
    }
    w_ext = plan.width();
    ch_one = plan.add("one");
    ch_bos = plan.add("start01");
    ch_inp = plan.add("input01");
    ch_zero = plan.add("zero");
    build_embedding();
    if (comp_len) {
      ch_comp = plan.add("norm_comp", comp_len);
      for (const auto& [tok, row] : comp_values)
        for (int j = 0; j < static_cast<int>(row.size()); ++j)
          if (row[j] != 0) emb[tok][ch_comp + j] = row[j];
    }
    w_copy = plan.width();
    ch_posinv = plan.add("inv_pos");
    ch_ncnt = plan.add("input_frac");
    ch_hn = plan.add("hash_n", 4);
    ch_hpos = plan.add("hash_pos", 4);
    ch_hpos1 = plan.add("hash_pos1", 4);
    ch_hN = plan.add("hash_blocklen", 4);
    ch_hb = plan.add("hash_block", 4);
    ch_hs0 = plan.add("hash_slot0", 4);
    if (inv) ch_hs = plan.add("hash_slot", 4);
    ch_hbm1 = plan.add("hash_block1", 4);
    ch_k0 = plan.add("hash_zero", 4);
    ch_fst = plan.add("first01");
    pc.resize(lc);
    for (int c = 0; c < lc; ++c) {
      const auto& info = atts[c];
      std::string tag = std::to_string(c + 1);
      pc[c].fb = plan.add("hash_gate" + tag, 4);
      pc[c].flag = plan.add("active" + tag);
      if (info.unmasked) pc[c].blkq = plan.add("query_prev" + tag, 4);
      if (info.causal) pc[c].blkqs = plan.add("query_self" + tag, 4);
      pc[c].nf = plan.add("parked" + tag, info.groups);
      pc[c].zq = plan.add("readzero" + tag,
                          static_cast<int>(info.read_channels.size()));
      pc[c].u = plan.add("allzero_gap" + tag);
      pc[c].czpm = plan.add("allzero_pm" + tag);
      pc[c].cz = plan.add("allzero01" + tag);
    }
    w_prov = plan.width();
  }

  void compute_mbar() {
    for (long x = 0; x <= lc; ++x)
      for (long y = x + 1; y <= lc; ++y) {
        Rat m2 = Rat((x * y + 1) * (x * y + 1)) / Rat((x * x + 1) * (y * y + 1));
        mbar = std::max(mbar, Rat((1 + m2) / 2));
      }
  }

  // ---- prologue --------------------------------------------------------

  void build_prologue() {
    // inverse position and input fraction from causal zero-query averages
    {
      attention_sublayer a;
      a.read = {ch_bos, ch_inp};
      a.read_norm2 = Rat(1);
      for (int h = 0; h < 2; ++h) {
        attention_head head;
        head.mask = mask_kind::causal;
        head.wq = zero_matrix(1, 2);
        head.wk = zero_matrix(1, 2);
        head.wv = zero_matrix(1, 2);
        head.wv.set(0, h, Rat(1));
        a.heads.push_back(std::move(head));
      }
      a.wo = zero_matrix(w_prov, 2);
      a.wo.set(ch_posinv, 0, Rat(1));
      a.wo.set(ch_ncnt, 1, Rat(1));
      d_setup.emplace_back(std::move(a));
    }
    auto hash4 = [](int base) {
      return std::vector<int>{base, base + 1, base + 2, base + 3};
    };
    auto push_gadget = [&](gadget_kind k, std::vector<int> read, std::vector<int> out,
                           std::vector<Rat> coeffs = {}, Rat constant = Rat(0),
                           std::string mode = "") {
      d_setup.emplace_back(make_gadget_layer(k, std::move(read), std::move(out),
                                             std::move(coeffs), constant,
                                             std::move(mode)));
    };
    push_gadget(gadget_kind::ln_hash, {ch_ncnt, ch_posinv}, hash4(ch_hn));
    push_gadget(gadget_kind::ln_hash, {ch_one, ch_posinv}, hash4(ch_hpos));
    push_gadget(gadget_kind::ln_hash, {ch_zero, ch_one}, hash4(ch_k0));
    push_gadget(gadget_kind::affine_int, hash4(ch_hpos), hash4(ch_hpos1), {Rat(1)},
                Rat(-1));
    std::vector<Rat> coeffs;
    for (long c : nppoly) coeffs.push_back(Rat(c));
    push_gadget(gadget_kind::poly_int, hash4(ch_hn), hash4(ch_hN), coeffs);
    std::vector<int> divread = hash4(ch_hpos1);
    for (int k = 0; k < 4; ++k) divread.push_back(ch_hN + k);
    push_gadget(gadget_kind::quotient, divread, hash4(ch_hb));
    push_gadget(gadget_kind::remainder, divread, hash4(ch_hs0));
    if (inv)
      push_gadget(gadget_kind::affine_int, hash4(ch_hs0), hash4(ch_hs), {Rat(1)},
                  Rat(1));
    push_gadget(gadget_kind::affine_int, hash4(ch_hb), hash4(ch_hbm1), {Rat(1)},
                Rat(-1));
    for (int c = 0; c < lc; ++c)
      push_gadget(gadget_kind::affine_int, hash4(ch_hb), hash4(pc[c].fb), {Rat(1)},
                  Rat(-(c + 1)));
    std::vector<std::pair<int, Rat>> seeds;
    seeds.emplace_back(ch_fst, Rat(-1));
    for (int c = 0; c < lc; ++c) {
      seeds.emplace_back(pc[c].flag, Rat(1));
      seeds.emplace_back(pc[c].czpm, Rat(1));
      for (int j = 0; j < static_cast<int>(atts[c].read_channels.size()); ++j)
        seeds.emplace_back(pc[c].zq + j, Rat(1));
    }
    d_setup.emplace_back(make_seed(seeds, ch_one, w_prov));
    d_setup.emplace_back(
        make_sign_threshold(ch_bos, ch_fst, sign_test::positive, w_prov));
    for (int c = 0; c < lc; ++c)
      d_setup.emplace_back(
          make_sign_threshold(pc[c].fb, pc[c].flag, sign_test::nonneg, w_prov));
    {
      std::vector<int> read = hash4(ch_hbm1);
      for (int k = 0; k < 4; ++k) read.push_back(ch_hb + k);
      for (int c = 0; c < lc; ++c) read.push_back(pc[c].flag);
      read.push_back(ch_one);
      int one_pos = static_cast<int>(read.size()) - 1;
      long rho = pad_read_square(read, ch_one, lc + 3, 0);
      std::vector<gated_copy> copies;
      for (int c = 0; c < lc; ++c) {
        int gate = 8 + c;
        if (atts[c].unmasked)
          for (int k = 0; k < 4; ++k)
            copies.push_back({k, gate, pc[c].blkq + k, Rat(1), false});
        if (atts[c].causal)
          for (int k = 0; k < 4; ++k)
            copies.push_back({4 + k, gate, pc[c].blkqs + k, Rat(1), false});
        for (int g = 0; g < atts[c].groups; ++g)
          copies.push_back({one_pos, gate, pc[c].nf + g, Rat(1), true});
      }
      d_setup.emplace_back(
          make_gated_copies(read, Rat(rho), one_pos, copies, w_prov));
    }
    fcmp_slot_index = d_setup.size();
    build_twin_fetch();
    if (inv)
      push_gadget(gadget_kind::hash_decode, hash4(ch_hs), {src.pos_channel}, {},
                  Rat(0), "inverse");
  }

  void build_twin_fetch() {
    attention_sublayer a;
    a.read.resize(w_copy);
    for (int r = 0; r < w_copy; ++r) a.read[r] = r;
    for (int k = 0; k < 4; ++k) a.read.push_back(ch_k0 + k);
    for (int k = 0; k < 4; ++k) a.read.push_back(ch_hb + k);
    for (int k = 0; k < 4; ++k) a.read.push_back(ch_hs0 + k);
    a.read_norm2 = Rat(fetch_root * fetch_root);
    int cols = w_copy + 12;
    for (int h = 0; h < 2; ++h) {
      attention_head head;
      head.mask = mask_kind::causal;
      head.wq = zero_matrix(8, cols);
      head.wk = zero_matrix(8, cols);
      for (int k = 0; k < 4; ++k) {
        // query block 0 for the fetch head, the own block for the anchor head
        head.wq.set(k, h == 0 ? w_copy + k : w_copy + 4 + k, Rat(1));
        head.wq.set(4 + k, w_copy + 8 + k, Rat(1));
        head.wk.set(k, w_copy + 4 + k, Rat(1));
        head.wk.set(4 + k, w_copy + 8 + k, Rat(1));
      }
      head.wv = zero_matrix(w_copy, cols);
      for (int r = 0; r < w_copy; ++r) head.wv.set(r, r, Rat(fetch_root));
      a.heads.push_back(std::move(head));
    }
    a.wo = zero_matrix(w_prov, 2 * w_copy);
    for (int r = 0; r < w_copy; ++r) {
      a.wo.set(r, r, Rat(1));
      a.wo.set(r, w_copy + r, Rat(-1));
    }
    d_setup.emplace_back(std::move(a));
  }

  void track_prologue() {
    at(ch_zero);  // touch so gathers see explicit zeros
    for (const auto& [c, v] : emb.at(kBosToken)) at(c) = radical_sum(v);
    bool first_attention = true;
    for (const auto& s : d_setup) {
      if (std::holds_alternative<attention_sublayer>(s)) {
        if (first_attention) {
          // causal zero-query averages over {1}: the start marker itself
          at(ch_posinv) += radical_sum(Rat(1));
          first_attention = false;
        }
        // the twin-fetch moves nothing at the start position (its own twin)
        continue;
      }
      track_positionwise(s);
    }
  }

  // ---- attention rewrite ----------------------------------------------

  // every normalized read component has magnitude at most 1, at garbage
  // positions included, so the l1 product of the score rows caps every raw
  // score position-independently
  Rat raw_score_bound(const attention_info& info) {
    Rat best(0);
    for (const auto& h : info.att->heads) {
      auto q = row_l1(h.wq), k = row_l1(h.wk);
      Rat total(0);
      for (int d = 0; d < h.wq.rows; ++d) total += q[d] * k[d];
      best = std::max(best, total);
    }
    return best;
  }

  void emit_zero_read_flags(int c) {
    const auto& info = atts[c];
    int k = static_cast<int>(info.read_channels.size());
    for (int j = 0; j < k; ++j) {
      auto t = make_sign_threshold(info.read_channels[j], pc[c].zq + j,
                                   sign_test::zero, w_prov);
      track_ff(t);
      d_body.emplace_back(std::move(t));
    }
    std::vector<int> read;
    for (int j = 0; j < k; ++j) read.push_back(pc[c].zq + j);
    read.push_back(ch_one);
    long rho = pad_read_square(read, ch_one, k + 1, 0);
    auto gapff = make_ff_shell(read, w_prov);
    std::vector<std::pair<int, Rat>> up;
    for (int j = 0; j < k; ++j) up.emplace_back(j, Rat(-rho));
    up.emplace_back(k, Rat(k) * Rat(rho));
    add_ff_unit(gapff, up, {{pc[c].u, Rat(-1)}});
    track_ff(gapff);
    d_body.emplace_back(std::move(gapff));
    auto pm = make_sign_threshold(pc[c].u, pc[c].czpm, sign_test::nonneg, w_prov);
    track_ff(pm);
    d_body.emplace_back(std::move(pm));
    auto cz = make_ff_shell({pc[c].czpm}, w_prov);
    add_ff_unit(cz, {{0, Rat(1)}}, {{pc[c].cz, Rat(1)}});
    track_ff(cz);
    d_body.emplace_back(std::move(cz));
  }

  void convert_attention(int idx) {
    const auto& info = atts[idx];
    emit_zero_read_flags(idx);
    Rat raw = raw_score_bound(info);
    Rat xblk = (2 * raw + 2) / (1 - mbar);
    Rat xshift = raw + xblk * mbar + 1;
    Rat xsink = xshift + raw + 1;

    attention_sublayer a;
    a.read = info.att->read;
    int m = static_cast<int>(a.read.size());
    int off_blkq = m;
    int off_blkqs = off_blkq + (info.unmasked ? 4 : 0);
    int off_hb = off_blkqs + (info.causal ? 4 : 0);
    int off_nf = off_hb + 4;
    int off_fst = off_nf + info.groups;
    int off_one = off_fst + 1;
    if (info.unmasked)
      for (int k = 0; k < 4; ++k) a.read.push_back(pc[idx].blkq + k);
    if (info.causal)
      for (int k = 0; k < 4; ++k) a.read.push_back(pc[idx].blkqs + k);
    for (int k = 0; k < 4; ++k) a.read.push_back(ch_hb + k);
    for (int g = 0; g < info.groups; ++g) a.read.push_back(pc[idx].nf + g);
    a.read.push_back(ch_fst);
    a.read.push_back(ch_one);
    for (long j = 0; j < info.declared; ++j) a.read.push_back(pc[idx].cz);
    for (long j = 0; j < info.pad_ones; ++j) a.read.push_back(ch_one);

    // norm compensation at position 1: bring its read norm onto the same
    // value-class grid the sublayer already uses, so the parked update every
    // inactive position receives stays inside that class
    radical_sum base;
    for (int chan : a.read) {
      const auto& v = at(chan);
      base += v * v;
    }
    if (!base.is_rational())
      fail("start-position state leaves the exact radical domain");
    Rat rbase = base.rational_value();
    Int mroot = ceil_sqrt_rat(rbase / Rat(info.declared));
    if (mroot < 1) mroot = 1;
    auto comp = square_decompose(Rat(info.declared) * Rat(mroot * mroot) - rbase);
    if (!comp.empty()) {
      pc[idx].fcmp = plan.add("parked_comp" + std::to_string(idx + 1),
                              static_cast<int>(comp.size()));
      pc[idx].fcmp_len = static_cast<int>(comp.size());
      for (int j = 0; j < pc[idx].fcmp_len; ++j) {
        fcmp_writes.emplace_back(pc[idx].fcmp + j, comp[j]);
        at(pc[idx].fcmp + j) = radical_sum(comp[j]);
        a.read.push_back(pc[idx].fcmp + j);
      }
    }
    int total = static_cast<int>(a.read.size());

    for (const auto& eh : info.att->heads) {
      attention_head head;
      head.mask = mask_kind::causal;
      int sd = eh.wq.rows;
      head.wq = zero_matrix(sd + 6, total);
      head.wk = zero_matrix(sd + 6, total);
      for (const auto& [d, s, v] : eh.wq.entries) head.wq.set(d, s, v);
      for (const auto& [d, s, v] : eh.wk.entries) head.wk.set(d, s, v);
      int qoff = eh.mask == mask_kind::unmasked ? off_blkq : off_blkqs;
      for (int k = 0; k < 4; ++k) {
        head.wq.set(sd + k, qoff + k, xblk);
        head.wk.set(sd + k, off_hb + k, Rat(1));
      }
      head.wq.set(sd + 4, off_one, -xshift);
      head.wk.set(sd + 4, off_one, Rat(1));
      head.wq.set(sd + 5, off_nf, xsink);
      head.wk.set(sd + 5, off_fst, Rat(1));
      head.wv = zero_matrix(info.head_dim, total);
      for (const auto& [r, s, v] : eh.wv.entries)
        head.wv.set(r, s, Rat(info.scale) * v);
      a.heads.push_back(std::move(head));
    }
    a.wo = info.att->wo;

    // position 1 is always parked on itself: apply its own update exactly
    radical_sum rho1 =
        radical_sum(Rat(mroot)) * radical_sum::sqrt_rational(Rat(info.declared));
    std::vector<std::vector<radical_sum>> vals(info.heads);
    for (int h = 0; h < info.heads; ++h) {
      vals[h].assign(info.head_dim, radical_sum());
      for (const auto& [r, s, v] : info.att->heads[h].wv.entries) {
        radical_sum term =
            radical_sum(v * Rat(info.scale)) * at(info.att->read[s]);
        vals[h][r] += term.div_root(rho1);
      }
    }
    for (const auto& [r, col, v] : info.att->wo.entries)
      at(r) += radical_sum(v) * vals[col / info.head_dim][col % info.head_dim];

    d_body.emplace_back(std::move(a));
  }

  void convert_body() {
    int c = 0;
    for (const auto* s : program) {
      if (std::holds_alternative<attention_sublayer>(*s)) {
        convert_attention(c++);
      } else if (std::holds_alternative<ff_sublayer>(*s)) {
        ff_sublayer ff = std::get<ff_sublayer>(*s);
        track_ff(ff);
        d_body.emplace_back(std::move(ff));
      } else {
        gadget_sublayer g = std::get<gadget_sublayer>(*s);
        track_gadget(g);
        d_body.emplace_back(std::move(g));
      }
    }
  }

  // ---- final assembly --------------------------------------------------

  void materialize_compensation() {
    if (fcmp_writes.empty()) return;
    auto ff = make_ff_shell({ch_fst}, plan.width());
    std::vector<std::pair<int, Rat>> down;
    for (const auto& [chan, v] : fcmp_writes) down.emplace_back(chan, v);
    add_ff_unit(ff, {{0, Rat(1)}}, down);
    d_setup.insert(d_setup.begin() + fcmp_slot_index, sublayer(std::move(ff)));
  }

  int final_width() {
    long l = 2;
    for (const auto& info : atts) l = std::lcm(l, static_cast<long>(info.heads));
    long w = std::max<long>(plan.width(), 2L * w_copy);
    w = (w + l - 1) / l * l;
    return static_cast<int>(w);
  }

  void fixup(std::vector<sublayer>& layers, int width) {
    for (auto& s : layers) {
      if (std::holds_alternative<ff_sublayer>(s)) {
        std::get<ff_sublayer>(s).down.rows = width;
      } else if (std::holds_alternative<attention_sublayer>(s)) {
        auto& a = std::get<attention_sublayer>(s);
        int h = static_cast<int>(a.heads.size());
        int hd_built = a.heads[0].wv.rows;
        int hd = width / h;
        for (auto& head : a.heads) head.wv.rows = hd;
        sparse_matrix wo = zero_matrix(width, h * hd);
        for (const auto& [r, col, v] : a.wo.entries)
          wo.set(r, col / hd_built * hd + col % hd_built, v);
        a.wo = std::move(wo);
      }
    }
  }

  transformer_ir assemble() {
    int width = final_width();
    materialize_compensation();
    fixup(d_setup, width);
    fixup(d_body, width);
    transformer_ir d;
    d.schema_version = src.schema_version;
    d.width = width;
    d.alphabet = src.alphabet;
    bool blank_listed = false, bos_listed = false;
    for (const auto& tok : d.alphabet) {
      blank_listed |= tok == kBlankToken;
      bos_listed |= tok == kBosToken;
    }
    if (!blank_listed) d.alphabet.push_back(kBlankToken);
    if (!bos_listed) d.alphabet.push_back(kBosToken);
    d.position_encoding = position_encoding_kind::none;
    d.pos_channel = -1;
    d.padding_coeffs.assign(std::max(src.padding_coeffs.size(), nppoly.size()), 0);
    for (std::size_t j = 0; j < src.padding_coeffs.size(); ++j)
      d.padding_coeffs[j] += src.padding_coeffs[j];
    for (std::size_t j = 0; j < nppoly.size(); ++j)
      d.padding_coeffs[j] += lc * nppoly[j];
    for (auto& [tok, row] : emb) {
      std::map<int, Rat> clean;
      for (const auto& [chn, v] : row)
        if (v != 0) clean[chn] = v;
      d.embedding[tok] = std::move(clean);
    }
    d.setup = std::move(d_setup);
    d.body = std::move(d_body);
    d.readout = src.readout;
    return d;
  }

  mask_conversion run() {
    w_e = src.width;
    iol = src.position_encoding == position_encoding_kind::index_over_length;
    inv = src.position_encoding == position_encoding_kind::inverse_index;
    w_ext = w_e + (iol ? 8 : 0);
    if (iol) {
      // prepass scratch sits right after the source channels; fixed here so
      // the prepass can be wired before the named layout is built
      pp_bos = w_e;
      pp_one = w_e + 1;
      pp_ci = w_e + 2;
      pp_cN = w_e + 3;
      pp_hf = w_e + 4;
    }
    build_block_poly();
    build_program();
    scan_attentions();
    layout();
    compute_mbar();
    build_prologue();
    track_prologue();
    convert_body();

    mask_conversion out;
    out.transformer = assemble();
    out.converted_sublayers = lc;
    out.added_padding.assign(nppoly.size(), 0);
    for (std::size_t j = 0; j < nppoly.size(); ++j)
      out.added_padding[j] = lc * nppoly[j];
    out.notes.push_back("rewrote " + std::to_string(lc) +
                        " attention sublayers; appended " + std::to_string(lc) +
                        " blocks of padding");
    if (iol)
      out.notes.push_back(
          "index-over-length positions are recovered by a locator pass, adding "
          "one extra rewritten sublayer and block");
    for (const auto& iss : validate_ir(out.transformer))
      if (iss.error)
        throw std::logic_error("mask: converted program failed validation: " +
                               iss.path + ": " + iss.message);
    return out;
  }
};

}  // namespace

Rat choose_dominance_constant(const transformer_ir& t) {
  for (const auto& iss : validate_ir(t))
    if (iss.error) fail("input failed validation: " + iss.path + ": " + iss.message);
  Rat best(0);
  auto visit = [&](const std::vector<sublayer>& layers) {
    for (const auto& s : layers) {
      if (!std::holds_alternative<attention_sublayer>(s)) continue;
      for (const auto& h : std::get<attention_sublayer>(s).heads) {
        auto q = row_l1(h.wq), k = row_l1(h.wk);
        Rat total(0);
        for (int d = 0; d < h.wq.rows; ++d) total += q[d] * k[d];
        best = std::max(best, total);
      }
    }
  };
  visit(t.setup);
  visit(t.body);
  visit(t.epilogue);
  return std::max(Rat(2), Rat(2 * best));
}

mask_conversion to_causal(const transformer_ir& t) {
  for (const auto& iss : validate_ir(t))
    if (iss.error) fail("input failed validation: " + iss.path + ": " + iss.message);
  if (t.fully_causal()) {
    mask_conversion out;
    out.transformer = t;
    out.identity = true;
    out.notes.push_back("already fully causal; returned unchanged");
    return out;
  }
  if (t.loop) fail("looped programs cannot be rewritten into appended blocks");
  converter conv(t);
  return conv.run();
}

}  // namespace ahat
