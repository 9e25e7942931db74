#include "ahat/sim.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>

namespace ahat {

namespace {

radical_sum dot(const std::vector<radical_sum>& a, const std::vector<radical_sum>& b) {
  radical_sum s;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].is_zero() || b[i].is_zero()) continue;
    s += a[i] * b[i];
  }
  return s;
}

std::vector<radical_sum> matvec(const sparse_matrix& m, const std::vector<radical_sum>& x) {
  std::vector<radical_sum> y(static_cast<std::size_t>(m.rows));
  for (const auto& [r, c, v] : m.entries) {
    const radical_sum& xv = x[static_cast<std::size_t>(c)];
    if (xv.is_zero()) continue;
    y[static_cast<std::size_t>(r)] += xv * radical_sum(v);
  }
  return y;
}

}  // namespace

std::array<radical_sum, 4> hash_of(const Rat& x) {
  radical_sum inv_norm = radical_sum::sqrt_rational(Rat(1) / (2 * x * x + 2));
  radical_sum xs = radical_sum(x) * inv_norm;
  return {xs, inv_norm, -xs, -inv_norm};
}

Rat hash_decode_rat(const std::array<radical_sum, 4>& h) {
  if (h[1].is_zero()) throw std::domain_error("hash decode: zero vector");
  radical_sum x = h[0].div_root(h[1]);
  if (!x.is_rational()) throw std::domain_error("hash decode: malformed vector");
  return x.rational_value();
}

std::vector<radical_sum> normalize_exact(const std::vector<radical_sum>& v) {
  radical_sum norm2;
  for (const auto& c : v)
    if (!c.is_zero()) norm2 += c * c;
  if (norm2.is_zero()) return std::vector<radical_sum>(v.size());
  if (!norm2.is_rational())
    throw sim_error("nested radical outside exact domain (squared norm " + norm2.str() + ")");
  radical_sum norm = radical_sum::sqrt_rational(norm2.rational_value());
  std::vector<radical_sum> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!v[i].is_zero()) out[i] = v[i].div_root(norm);
  return out;
}

std::pair<std::vector<radical_sum>, tie_info> ahat_argmax_average(
    const std::vector<radical_sum>& query, const std::vector<std::vector<radical_sum>>& keys,
    const std::vector<std::vector<radical_sum>>& values) {
  if (keys.empty()) throw sim_error("attention over an empty context");
  std::vector<int> tie{0};
  radical_sum best = dot(query, keys[0]);
  for (int j = 1; j < static_cast<int>(keys.size()); ++j) {
    radical_sum s = dot(query, keys[static_cast<std::size_t>(j)]);
    int c = radical_sum::compare(s, best);
    if (c > 0) {
      best = std::move(s);
      tie.assign(1, j);
    } else if (c == 0) {
      tie.push_back(j);
    }
  }
  tie_info info;
  info.positions = tie;
  info.singleton = tie.size() == 1;
  if (!info.singleton) {
    // certification: all tied keys agree exactly on the support of the query
    std::vector<std::size_t> support;
    for (std::size_t d = 0; d < query.size(); ++d)
      if (!query[d].is_zero()) support.push_back(d);
    const auto& k0 = keys[static_cast<std::size_t>(tie[0])];
    for (std::size_t t = 1; t < tie.size(); ++t) {
      const auto& kt = keys[static_cast<std::size_t>(tie[t])];
      for (std::size_t d : support)
        if (!(k0[d] == kt[d]))
          throw sim_error("uncertified attention tie: keys differ on the query support");
    }
  }
  std::vector<radical_sum> avg(values.empty() ? 0 : values[0].size());
  for (int j : tie)
    for (std::size_t c = 0; c < avg.size(); ++c)
      avg[c] += values[static_cast<std::size_t>(j)][c];
  Rat count(static_cast<long>(tie.size()));
  for (auto& c : avg)
    if (!c.is_zero()) c = c.div_rat(count);
  return {std::move(avg), std::move(info)};
}

namespace {

std::array<radical_sum, 4> take4(const std::vector<radical_sum>& in, std::size_t at) {
  return {in[at], in[at + 1], in[at + 2], in[at + 3]};
}

Rat decode_int_like(const std::vector<radical_sum>& in, std::size_t at) {
  return hash_decode_rat(take4(in, at));
}

std::vector<radical_sum> hash_vec(const Rat& x) {
  auto h = hash_of(x);
  return {h[0], h[1], h[2], h[3]};
}

}  // namespace

std::vector<radical_sum> apply_gadget(const gadget_sublayer& g,
                                      const std::vector<radical_sum>& inputs) {
  switch (g.kind) {
    case gadget_kind::ln_hash: {
      std::vector<radical_sum> v = {inputs[0], inputs[1], -inputs[0], -inputs[1]};
      return normalize_exact(v);
    }
    case gadget_kind::quotient:
    case gadget_kind::remainder: {
      Rat a = decode_int_like(inputs, 0);
      Rat b = decode_int_like(inputs, 4);
      if (b == 0) throw std::domain_error("gadget: division by zero");
      Int q = rat_floor(a / b);
      if (g.kind == gadget_kind::quotient) return hash_vec(Rat(q));
      return hash_vec(a - Rat(q) * b);
    }
    case gadget_kind::hash_equal: {
      bool eq = true;
      for (int i = 0; i < 4; ++i)
        if (!(inputs[static_cast<std::size_t>(i)] == inputs[static_cast<std::size_t>(i + 4)]))
          eq = false;
      return {radical_sum(Rat(eq ? 1 : -1))};
    }
    case gadget_kind::affine_int: {
      Rat acc = g.constant;
      for (std::size_t i = 0; i < g.coeffs.size(); ++i)
        acc += g.coeffs[i] * decode_int_like(inputs, 4 * i);
      return hash_vec(acc);
    }
    case gadget_kind::poly_int: {
      Rat x = decode_int_like(inputs, 0);
      Rat acc(0), power(1);
      for (const Rat& c : g.coeffs) {
        acc += c * power;
        power *= x;
      }
      return hash_vec(acc);
    }
    case gadget_kind::bit_extract: {
      Rat x = decode_int_like(inputs, 0);
      Rat j = decode_int_like(inputs, 4);
      if (!is_integer(x) || !is_integer(j) || num(x) < 0 || num(j) < 1 ||
          num(j) > 1000000000)
        throw std::domain_error("gadget: bit extraction out of domain");
      bool bit = boost::multiprecision::bit_test(num(x), num(j).convert_to<unsigned>() - 1);
      return {radical_sum(Rat(bit ? 1 : -1))};
    }
    case gadget_kind::hash_decode: {
      Rat x = decode_int_like(inputs, 0);
      if (g.mode == "inverse") {
        if (x == 0) throw std::domain_error("gadget: reciprocal of zero");
        return {radical_sum(Rat(1) / x)};
      }
      return {radical_sum(x)};
    }
  }
  throw std::logic_error("bad gadget kind");
}

std::string render_trace_record(const trace_record& r) {
  std::ostringstream out;
  const char* blocks[3] = {"setup", "body", "readout"};
  out << "block=" << blocks[r.block] << " sub=" << r.sublayer << " iter=" << r.iteration
      << " pos=" << r.position;
  for (const auto& [ch, val] : r.channels) out << " ch" << ch << "=" << val;
  for (std::size_t h = 0; h < r.heads.size(); ++h) {
    out << " head" << h << ".tie={";
    for (std::size_t i = 0; i < r.heads[h].tie.size(); ++i) {
      if (i) out << ",";
      out << r.heads[h].tie[i];
    }
    out << "} cert=" << (r.heads[h].singleton ? "singleton" : "shared_keys");
  }
  return out.str();
}

namespace {

struct head_cache_entry {
  std::vector<std::vector<radical_sum>> keys;
  // per query position: query vector and its tie set
  std::vector<std::optional<std::pair<std::vector<radical_sum>, tie_info>>> per_pos;
};

struct sim_state {
  const transformer_ir& ir;
  const run_options& opts;
  std::vector<std::vector<radical_sum>> h;  // [pos][channel]
  long n_tokens = 0;
  run_stats stats;
  std::vector<trace_record> trace;
  // cache keyed by (body sublayer index, head index)
  std::map<std::pair<int, int>, head_cache_entry> cache;

  sim_state(const transformer_ir& t, const run_options& o) : ir(t), opts(o) {}

  std::vector<radical_sum> gather(const std::vector<int>& read, int pos) const {
    std::vector<radical_sum> out;
    out.reserve(read.size());
    for (int c : read) out.push_back(h[static_cast<std::size_t>(pos)][static_cast<std::size_t>(c)]);
    return out;
  }

  std::vector<radical_sum> prenorm(const std::vector<int>& read, int pos,
                                   const std::optional<Rat>& declared) {
    std::vector<radical_sum> g = gather(read, pos);
    if (declared) {
      radical_sum norm2;
      for (const auto& c : g)
        if (!c.is_zero()) norm2 += c * c;
      if (!norm2.is_zero() && !(norm2 == radical_sum(*declared))) {
        std::string detail;
        for (std::size_t i = 0; i < g.size(); ++i)
          detail += " [" + std::to_string(read[i]) + "]=" + g[i].str();
        throw sim_error("declared read norm violated: have " + norm2.str() + ", declared " +
                        rat_str(*declared) + " slots:" + detail);
      }
    }
    ++stats.normalizations;
    return normalize_exact(g);
  }

  void apply_attention(const attention_sublayer& att, int block, int sub_index, long iteration) {
    int npos = static_cast<int>(h.size());
    int width = ir.width;
    int head_dim = width / static_cast<int>(att.heads.size());
    std::vector<std::vector<radical_sum>> z(static_cast<std::size_t>(npos));
    for (int p = 0; p < npos; ++p) z[static_cast<std::size_t>(p)] = prenorm(att.read, p, att.read_norm2);

    std::vector<std::vector<radical_sum>> delta(
        static_cast<std::size_t>(npos), std::vector<radical_sum>(static_cast<std::size_t>(width)));
    std::vector<std::vector<head_trace>> traces(static_cast<std::size_t>(npos));

    for (int hi = 0; hi < static_cast<int>(att.heads.size()); ++hi) {
      const attention_head& head = att.heads[static_cast<std::size_t>(hi)];
      std::vector<std::vector<radical_sum>> keys(static_cast<std::size_t>(npos));
      std::vector<std::vector<radical_sum>> vals(static_cast<std::size_t>(npos));
      for (int p = 0; p < npos; ++p) {
        keys[static_cast<std::size_t>(p)] = matvec(head.wk, z[static_cast<std::size_t>(p)]);
        vals[static_cast<std::size_t>(p)] = matvec(head.wv, z[static_cast<std::size_t>(p)]);
      }
      head_cache_entry* hc = nullptr;
      if (block == 1) {
        hc = &cache[{sub_index, hi}];
        if (hc->keys != keys) {
          hc->keys = keys;
          hc->per_pos.assign(static_cast<std::size_t>(npos), std::nullopt);
        }
      }
      for (int p = 0; p < npos; ++p) {
        std::vector<radical_sum> q = matvec(head.wq, z[static_cast<std::size_t>(p)]);
        int ctx = head.mask == mask_kind::causal ? p + 1 : npos;
        std::vector<std::vector<radical_sum>> ctx_keys(keys.begin(), keys.begin() + ctx);
        std::vector<std::vector<radical_sum>> ctx_vals(vals.begin(), vals.begin() + ctx);
        std::vector<radical_sum> avg;
        tie_info info;
        bool reused = false;
        if (hc && (*hc).per_pos[static_cast<std::size_t>(p)] &&
            (*hc).per_pos[static_cast<std::size_t>(p)]->first == q) {
          info = (*hc).per_pos[static_cast<std::size_t>(p)]->second;
          ++stats.cache_hits;
          reused = true;
          avg.assign(static_cast<std::size_t>(head_dim), radical_sum());
          for (int j : info.positions)
            for (int c = 0; c < head_dim; ++c)
              avg[static_cast<std::size_t>(c)] += ctx_vals[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
          Rat count(static_cast<long>(info.positions.size()));
          for (auto& c : avg)
            if (!c.is_zero()) c = c.div_rat(count);
        }
        if (!reused) {
          auto [a, i] = ahat_argmax_average(q, ctx_keys, ctx_vals);
          avg = std::move(a);
          info = std::move(i);
          if (hc) {
            ++stats.cache_misses;
            (*hc).per_pos[static_cast<std::size_t>(p)] = {q, info};
          }
        }
        ++stats.ties_observed;
        if (info.positions.size() > 1) ++stats.multi_ties;
        // route through the output projection: concat slot hi*head_dim + c
        for (const auto& [r, c, v] : att.wo.entries) {
          int src_head = c / head_dim;
          if (src_head != hi) continue;
          const radical_sum& val = avg[static_cast<std::size_t>(c % head_dim)];
          if (val.is_zero()) continue;
          delta[static_cast<std::size_t>(p)][static_cast<std::size_t>(r)] += val * radical_sum(v);
        }
        if (opts.capture_trace) {
          head_trace ht;
          for (int j : info.positions) ht.tie.push_back(j + 1);
          ht.singleton = info.singleton;
          traces[static_cast<std::size_t>(p)].push_back(std::move(ht));
        }
      }
    }
    for (int p = 0; p < npos; ++p)
      for (int c = 0; c < width; ++c)
        if (!delta[static_cast<std::size_t>(p)][static_cast<std::size_t>(c)].is_zero())
          h[static_cast<std::size_t>(p)][static_cast<std::size_t>(c)] +=
              delta[static_cast<std::size_t>(p)][static_cast<std::size_t>(c)];
    if (opts.capture_trace) record(block, sub_index, iteration, &traces);
  }

  void apply_ff(const ff_sublayer& ff, int block, int sub_index, long iteration) {
    int npos = static_cast<int>(h.size());
    std::vector<std::vector<radical_sum>> delta(static_cast<std::size_t>(npos));
    for (int p = 0; p < npos; ++p) {
      std::vector<radical_sum> z = prenorm(ff.read, p, std::nullopt);
      std::vector<radical_sum> hidden = matvec(ff.up, z);
      for (auto& x : hidden)
        if (x.sign() < 0) x = radical_sum();
      delta[static_cast<std::size_t>(p)] = matvec(ff.down, hidden);
    }
    for (int p = 0; p < npos; ++p)
      for (int c = 0; c < ir.width; ++c)
        if (!delta[static_cast<std::size_t>(p)][static_cast<std::size_t>(c)].is_zero())
          h[static_cast<std::size_t>(p)][static_cast<std::size_t>(c)] +=
              delta[static_cast<std::size_t>(p)][static_cast<std::size_t>(c)];
    if (opts.capture_trace) record(block, sub_index, iteration, nullptr);
  }

  void apply_gadget_layer(const gadget_sublayer& g, int block, int sub_index, long iteration) {
    int npos = static_cast<int>(h.size());
    std::vector<std::optional<std::vector<radical_sum>>> outs(static_cast<std::size_t>(npos));
    for (int p = 0; p < npos; ++p) {
      try {
        outs[static_cast<std::size_t>(p)] = apply_gadget(g, gather(g.read, p));
      } catch (const std::domain_error&) {
        ++stats.gadget_faults;  // totalized: faulting tokens receive no update
      }
    }
    for (int p = 0; p < npos; ++p) {
      if (!outs[static_cast<std::size_t>(p)]) continue;
      const auto& val = *outs[static_cast<std::size_t>(p)];
      for (std::size_t i = 0; i < g.out.size(); ++i)
        if (!val[i].is_zero())
          h[static_cast<std::size_t>(p)][static_cast<std::size_t>(g.out[i])] += val[i];
    }
    if (opts.capture_trace) record(block, sub_index, iteration, nullptr);
  }

  void record(int block, int sub_index, long iteration,
              const std::vector<std::vector<head_trace>>* heads) {
    int npos = static_cast<int>(h.size());
    for (int p = 0; p < npos; ++p) {
      trace_record r;
      r.block = block;
      r.sublayer = sub_index;
      r.iteration = iteration;
      r.position = p + 1;
      for (int c : opts.trace_channels)
        r.channels.emplace_back(c, h[static_cast<std::size_t>(p)][static_cast<std::size_t>(c)].str());
      if (heads) r.heads = (*heads)[static_cast<std::size_t>(p)];
      trace.push_back(std::move(r));
    }
  }

  void apply(const sublayer& sl, int block, int sub_index, long iteration) {
    if (const auto* att = std::get_if<attention_sublayer>(&sl))
      apply_attention(*att, block, sub_index, iteration);
    else if (const auto* ff = std::get_if<ff_sublayer>(&sl))
      apply_ff(*ff, block, sub_index, iteration);
    else
      apply_gadget_layer(std::get<gadget_sublayer>(sl), block, sub_index, iteration);
  }
};

}  // namespace

run_result run_ir(const transformer_ir& t, const std::string& word, const run_options& opts) {
  {
    auto issues = validate_ir(t);
    for (const auto& i : issues)
      if (i.error) throw std::domain_error("run: invalid transformer: " + i.path + ": " + i.message);
  }
  if (opts.strict_sublayers) {
    for (const auto* block : {&t.setup, &t.body, &t.epilogue})
      for (const auto& sl : *block)
        if (std::holds_alternative<gadget_sublayer>(sl))
          throw std::domain_error("run: idealized sublayers rejected in strict mode");
  }
  // tokenize: one character per token
  std::vector<std::string> seq;
  seq.push_back(kBosToken);
  for (char ch : word) {
    std::string tok(1, ch);
    if (tok == kBosToken || tok == kBlankToken ||
        std::find(t.alphabet.begin(), t.alphabet.end(), tok) == t.alphabet.end())
      throw std::domain_error("run: word symbol '" + tok + "' not in alphabet");
    seq.push_back(tok);
  }
  long n = static_cast<long>(word.size());
  long pad = t.padding_tokens(n);
  for (long i = 0; i < pad; ++i) seq.push_back(kBlankToken);
  long total = static_cast<long>(seq.size());

  sim_state st(t, opts);
  st.n_tokens = total;
  st.h.assign(static_cast<std::size_t>(total),
              std::vector<radical_sum>(static_cast<std::size_t>(t.width)));
  for (long p = 0; p < total; ++p) {
    auto it = t.embedding.find(seq[static_cast<std::size_t>(p)]);
    if (it != t.embedding.end())
      for (const auto& [ch, v] : it->second)
        st.h[static_cast<std::size_t>(p)][static_cast<std::size_t>(ch)] = radical_sum(v);
    if (t.position_encoding == position_encoding_kind::inverse_index)
      st.h[static_cast<std::size_t>(p)][static_cast<std::size_t>(t.pos_channel)] +=
          radical_sum(Rat(1, p + 1));
    else if (t.position_encoding == position_encoding_kind::index_over_length)
      st.h[static_cast<std::size_t>(p)][static_cast<std::size_t>(t.pos_channel)] +=
          radical_sum(Rat(p + 1, total));
  }

  long reps = opts.unroll_override >= 0 ? opts.unroll_override : t.unroll_count(total);
  for (std::size_t i = 0; i < t.setup.size(); ++i)
    st.apply(t.setup[i], 0, static_cast<int>(i), 0);
  for (long r = 1; r <= reps; ++r)
    for (std::size_t i = 0; i < t.body.size(); ++i)
      st.apply(t.body[i], 1, static_cast<int>(i), r);
  for (std::size_t i = 0; i < t.epilogue.size(); ++i)
    st.apply(t.epilogue[i], 2, static_cast<int>(i), reps + 1);

  run_result res;
  res.total_length = total;
  res.iterations = reps;
  const auto& last = st.h[static_cast<std::size_t>(total - 1)];
  if (t.readout.rule == "sign") {
    res.decision = last[static_cast<std::size_t>(t.readout.channel)].sign() > 0;
  } else {
    int best = 0;
    for (int i = 1; i < static_cast<int>(t.readout.channels.size()); ++i) {
      const auto& cand = last[static_cast<std::size_t>(t.readout.channels[static_cast<std::size_t>(i)])];
      const auto& cur = last[static_cast<std::size_t>(t.readout.channels[static_cast<std::size_t>(best)])];
      if (radical_sum::compare(cand, cur) > 0) best = i;
    }
    res.argmax_index = best;
    res.decision = best != 0;
  }
  res.residuals = std::move(st.h);
  res.stats = st.stats;
  res.trace = std::move(st.trace);
  return res;
}

}  // namespace ahat
