#include "ahat/ir.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ahat {

using ordered_json = nlohmann::ordered_json;

void sparse_matrix::set(int r, int c, const Rat& v) {
  if (r < 0 || r >= rows || c < 0 || c >= cols)
    throw std::domain_error("matrix: entry out of range");
  auto key = std::make_tuple(r, c, Rat(0));
  auto it = std::lower_bound(entries.begin(), entries.end(), key,
                             [](const auto& a, const auto& b) {
                               return std::get<0>(a) != std::get<0>(b)
                                          ? std::get<0>(a) < std::get<0>(b)
                                          : std::get<1>(a) < std::get<1>(b);
                             });
  bool found = it != entries.end() && std::get<0>(*it) == r && std::get<1>(*it) == c;
  if (v == 0) {
    if (found) entries.erase(it);
    return;
  }
  if (found)
    std::get<2>(*it) = v;
  else
    entries.emplace(it, r, c, v);
}

Rat sparse_matrix::at(int r, int c) const {
  for (const auto& [i, j, v] : entries)
    if (i == r && j == c) return v;
  return Rat(0);
}

void sparse_matrix::scale(const Rat& f) {
  if (f == 0) {
    entries.clear();
    return;
  }
  for (auto& e : entries) std::get<2>(e) *= f;
}

long transformer_ir::padding_tokens(long n) const {
  long total = 0;
  long power = 1;
  for (long c : padding_coeffs) {
    total += c * power;
    power *= n;
  }
  return total;
}

long unroll_depth(long c, int d, long total_length) {
  if (total_length < 1) throw std::domain_error("ir: sequence length must be positive");
  long log_ceil = 0;
  for (long v = 1; v < total_length; v *= 2) ++log_ceil;
  long r = c;
  for (int i = 0; i < d; ++i) r *= log_ceil;
  return r;
}

long transformer_ir::unroll_count(long total_length) const {
  if (!loop) return 1;
  return unroll_depth(loop->c, loop->d, total_length);
}

bool transformer_ir::fully_causal() const {
  for (const auto* block : {&setup, &body, &epilogue})
    for (const auto& sl : *block)
      if (const auto* att = std::get_if<attention_sublayer>(&sl))
        for (const auto& h : att->heads)
          if (h.mask == mask_kind::unmasked) return false;
  return true;
}

namespace {

void check_matrix(const sparse_matrix& m, int rows, int cols, const std::string& path,
                  std::vector<validation_issue>& out) {
  if (m.rows != rows || m.cols != cols) {
    out.push_back({true, path,
                   "expected shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                       ", declared " + std::to_string(m.rows) + "x" + std::to_string(m.cols)});
    return;
  }
  for (const auto& [r, c, v] : m.entries)
    if (r < 0 || r >= m.rows || c < 0 || c >= m.cols) {
      out.push_back({true, path, "entry out of declared shape"});
      return;
    }
}

void check_channels(const std::vector<int>& chans, int width, const std::string& path,
                    std::vector<validation_issue>& out) {
  for (int c : chans)
    if (c < 0 || c >= width) {
      out.push_back({true, path, "channel " + std::to_string(c) + " out of range"});
      return;
    }
}

void validate_sublayer(const sublayer& sl, int width, const std::string& path,
                       std::vector<validation_issue>& out) {
  if (const auto* att = std::get_if<attention_sublayer>(&sl)) {
    check_channels(att->read, width, path + ".read", out);
    int read_w = static_cast<int>(att->read.size());
    if (att->heads.empty()) {
      out.push_back({true, path, "attention needs at least one head"});
      return;
    }
    int h = static_cast<int>(att->heads.size());
    if (width % h != 0) {
      out.push_back({true, path, "heads must divide width"});
      return;
    }
    int head_dim = width / h;
    int score_dim = -1;
    for (std::size_t i = 0; i < att->heads.size(); ++i) {
      const auto& hd = att->heads[i];
      std::string hp = path + ".heads[" + std::to_string(i) + "]";
      if (hd.wq.rows != hd.wk.rows)
        out.push_back({true, hp, "query and key dimensions differ"});
      if (score_dim < 0) score_dim = hd.wq.rows;
      check_matrix(hd.wq, hd.wq.rows, read_w, hp + ".wq", out);
      check_matrix(hd.wk, hd.wk.rows, read_w, hp + ".wk", out);
      check_matrix(hd.wv, head_dim, read_w, hp + ".wv", out);
    }
    check_matrix(att->wo, width, h * head_dim, path + ".wo", out);
    if (att->read_norm2 && *att->read_norm2 <= 0)
      out.push_back({true, path, "declared read norm must be positive"});
  } else if (const auto* ff = std::get_if<ff_sublayer>(&sl)) {
    check_channels(ff->read, width, path + ".read", out);
    int read_w = static_cast<int>(ff->read.size());
    check_matrix(ff->up, ff->up.rows, read_w, path + ".up", out);
    check_matrix(ff->down, width, ff->up.rows, path + ".down", out);
  } else {
    const auto& g = std::get<gadget_sublayer>(sl);
    check_channels(g.read, width, path + ".read", out);
    check_channels(g.out, width, path + ".out", out);
    auto need = [&](std::size_t r, std::size_t o) {
      if (g.read.size() != r)
        out.push_back({true, path, "gadget expects " + std::to_string(r) + " input channels"});
      if (g.out.size() != o)
        out.push_back({true, path, "gadget expects " + std::to_string(o) + " output channels"});
    };
    switch (g.kind) {
      case gadget_kind::ln_hash: need(2, 4); break;
      case gadget_kind::quotient:
      case gadget_kind::remainder: need(8, 4); break;
      case gadget_kind::hash_equal: need(8, 1); break;
      case gadget_kind::affine_int:
        if (g.coeffs.empty())
          out.push_back({true, path, "affine gadget needs coefficients"});
        need(4 * g.coeffs.size(), 4);
        break;
      case gadget_kind::poly_int:
        if (g.coeffs.empty())
          out.push_back({true, path, "polynomial gadget needs coefficients"});
        need(4, 4);
        break;
      case gadget_kind::bit_extract: need(8, 1); break;
      case gadget_kind::hash_decode:
        need(4, 1);
        if (g.mode != "value" && g.mode != "inverse")
          out.push_back({true, path, "decode mode must be value or inverse"});
        break;
    }
    std::vector<int> sorted_out = g.out;
    std::sort(sorted_out.begin(), sorted_out.end());
    if (std::adjacent_find(sorted_out.begin(), sorted_out.end()) != sorted_out.end())
      out.push_back({true, path, "gadget output channels must be distinct"});
  }
}

}  // namespace

std::vector<validation_issue> validate_ir(const transformer_ir& t) {
  std::vector<validation_issue> out;
  if (t.width < 1) out.push_back({true, "width", "width must be positive"});
  if (t.alphabet.empty()) out.push_back({true, "alphabet", "alphabet is empty"});
  auto has = [&](const char* tok) {
    return std::find(t.alphabet.begin(), t.alphabet.end(), tok) != t.alphabet.end();
  };
  if (!has(kBosToken)) out.push_back({true, "alphabet", "missing start-of-sequence token"});
  if (!has(kBlankToken)) out.push_back({true, "alphabet", "missing blank token"});
  {
    auto sorted = t.alphabet;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      out.push_back({true, "alphabet", "duplicate token"});
  }
  for (const auto& [tok, vec] : t.embedding) {
    if (!has(tok.c_str()))
      out.push_back({true, "embedding." + tok, "token not in alphabet"});
    for (const auto& [ch, v] : vec)
      if (ch < 0 || ch >= t.width) {
        out.push_back({true, "embedding." + tok, "channel out of range"});
        break;
      }
  }
  if (t.position_encoding != position_encoding_kind::none &&
      (t.pos_channel < 0 || t.pos_channel >= t.width))
    out.push_back({true, "position_encoding", "channel out of range"});
  for (long c : t.padding_coeffs)
    if (c < 0) out.push_back({true, "padding", "negative coefficient"});
  if (std::all_of(t.padding_coeffs.begin(), t.padding_coeffs.end(),
                  [](long c) { return c == 0; }))
    out.push_back({false, "padding", "no padding tokens at any length"});
  if (t.loop) {
    if (t.loop->c < 1) out.push_back({true, "loop", "coefficient must be positive"});
    if (t.loop->d < 0) out.push_back({true, "loop", "exponent must be nonnegative"});
  }
  if (t.readout.rule == "sign") {
    if (t.readout.channel < 0 || t.readout.channel >= t.width)
      out.push_back({true, "readout", "channel out of range"});
  } else if (t.readout.rule == "argmax") {
    if (t.readout.channels.empty())
      out.push_back({true, "readout", "argmax needs logit channels"});
    check_channels(t.readout.channels, t.width, "readout", out);
  } else {
    out.push_back({true, "readout", "unknown rule '" + t.readout.rule + "'"});
  }
  const char* names[3] = {"setup", "body", "readout"};
  const std::vector<sublayer>* blocks[3] = {&t.setup, &t.body, &t.epilogue};
  for (int b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < blocks[b]->size(); ++i)
      validate_sublayer((*blocks[b])[i], t.width,
                        std::string("blocks.") + names[b] + "[" + std::to_string(i) + "]",
                        out);
  if (t.fully_causal() && t.position_encoding != position_encoding_kind::none)
    out.push_back(
        {false, "position_encoding", "position encoding redundant for fully causal transformers"});
  return out;
}

namespace {

ordered_json matrix_to_json(const sparse_matrix& m) {
  ordered_json j;
  j["rows"] = m.rows;
  j["cols"] = m.cols;
  ordered_json es = ordered_json::array();
  for (const auto& [r, c, v] : m.entries) es.push_back({r, c, rat_str(v)});
  j["entries"] = std::move(es);
  return j;
}

sparse_matrix matrix_from_json(const ordered_json& j) {
  sparse_matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
  for (const auto& e : j.at("entries")) {
    if (!e.is_array() || e.size() != 3) throw std::domain_error("ir: bad matrix entry");
    m.set(e[0].get<int>(), e[1].get<int>(), parse_rat(e[2].get<std::string>()));
  }
  return m;
}

const char* gadget_name(gadget_kind k) {
  switch (k) {
    case gadget_kind::ln_hash: return "ln_hash";
    case gadget_kind::quotient: return "quotient";
    case gadget_kind::remainder: return "remainder";
    case gadget_kind::hash_equal: return "hash_equal";
    case gadget_kind::affine_int: return "affine_int";
    case gadget_kind::poly_int: return "poly_int";
    case gadget_kind::bit_extract: return "bit_extract";
    case gadget_kind::hash_decode: return "hash_decode";
  }
  return "?";
}

gadget_kind gadget_from_name(const std::string& s) {
  if (s == "ln_hash") return gadget_kind::ln_hash;
  if (s == "quotient") return gadget_kind::quotient;
  if (s == "remainder") return gadget_kind::remainder;
  if (s == "hash_equal") return gadget_kind::hash_equal;
  if (s == "affine_int") return gadget_kind::affine_int;
  if (s == "poly_int") return gadget_kind::poly_int;
  if (s == "bit_extract") return gadget_kind::bit_extract;
  if (s == "hash_decode") return gadget_kind::hash_decode;
  throw std::domain_error("ir: unknown gadget '" + s + "'");
}

ordered_json sublayer_to_json(const sublayer& sl) {
  ordered_json j;
  if (const auto* att = std::get_if<attention_sublayer>(&sl)) {
    j["kind"] = "attention";
    j["read"] = att->read;
    if (att->read_norm2) j["read_norm2"] = rat_str(*att->read_norm2);
    ordered_json hs = ordered_json::array();
    for (const auto& h : att->heads) {
      ordered_json hj;
      hj["mask"] = h.mask == mask_kind::causal ? "causal" : "unmasked";
      hj["wq"] = matrix_to_json(h.wq);
      hj["wk"] = matrix_to_json(h.wk);
      hj["wv"] = matrix_to_json(h.wv);
      hs.push_back(std::move(hj));
    }
    j["heads"] = std::move(hs);
    j["wo"] = matrix_to_json(att->wo);
  } else if (const auto* ff = std::get_if<ff_sublayer>(&sl)) {
    j["kind"] = "ff";
    j["read"] = ff->read;
    j["up"] = matrix_to_json(ff->up);
    j["down"] = matrix_to_json(ff->down);
  } else {
    const auto& g = std::get<gadget_sublayer>(sl);
    j["kind"] = "gadget";
    j["gadget"] = gadget_name(g.kind);
    j["read"] = g.read;
    j["out"] = g.out;
    if (!g.coeffs.empty()) {
      ordered_json cs = ordered_json::array();
      for (const auto& c : g.coeffs) cs.push_back(rat_str(c));
      j["coeffs"] = std::move(cs);
    }
    if (g.constant != 0) j["constant"] = rat_str(g.constant);
    if (!g.mode.empty()) j["mode"] = g.mode;
    j["idealized"] = g.idealized;
  }
  return j;
}

sublayer sublayer_from_json(const ordered_json& j) {
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "attention") {
    attention_sublayer att;
    att.read = j.at("read").get<std::vector<int>>();
    if (j.contains("read_norm2"))
      att.read_norm2 = parse_rat(j.at("read_norm2").get<std::string>());
    for (const auto& hj : j.at("heads")) {
      attention_head h;
      std::string m = hj.at("mask").get<std::string>();
      if (m == "causal")
        h.mask = mask_kind::causal;
      else if (m == "unmasked")
        h.mask = mask_kind::unmasked;
      else
        throw std::domain_error("ir: unknown mask '" + m + "'");
      h.wq = matrix_from_json(hj.at("wq"));
      h.wk = matrix_from_json(hj.at("wk"));
      h.wv = matrix_from_json(hj.at("wv"));
      att.heads.push_back(std::move(h));
    }
    att.wo = matrix_from_json(j.at("wo"));
    return att;
  }
  if (kind == "ff") {
    ff_sublayer ff;
    ff.read = j.at("read").get<std::vector<int>>();
    ff.up = matrix_from_json(j.at("up"));
    ff.down = matrix_from_json(j.at("down"));
    return ff;
  }
  if (kind == "gadget") {
    gadget_sublayer g;
    g.kind = gadget_from_name(j.at("gadget").get<std::string>());
    g.read = j.at("read").get<std::vector<int>>();
    g.out = j.at("out").get<std::vector<int>>();
    if (j.contains("coeffs"))
      for (const auto& c : j.at("coeffs")) g.coeffs.push_back(parse_rat(c.get<std::string>()));
    if (j.contains("constant")) g.constant = parse_rat(j.at("constant").get<std::string>());
    if (j.contains("mode")) g.mode = j.at("mode").get<std::string>();
    if (j.contains("idealized")) g.idealized = j.at("idealized").get<bool>();
    return g;
  }
  throw std::domain_error("ir: unknown sublayer kind '" + kind + "'");
}

const char* pos_name(position_encoding_kind k) {
  switch (k) {
    case position_encoding_kind::none: return "none";
    case position_encoding_kind::inverse_index: return "inverse_index";
    case position_encoding_kind::index_over_length: return "index_over_length";
  }
  return "?";
}

}  // namespace

std::string serialize_ir(const transformer_ir& t) {
  ordered_json j;
  j["schema_version"] = t.schema_version;
  j["width"] = t.width;
  j["alphabet"] = t.alphabet;
  ordered_json pe;
  pe["kind"] = pos_name(t.position_encoding);
  if (t.position_encoding != position_encoding_kind::none) pe["channel"] = t.pos_channel;
  j["position_encoding"] = std::move(pe);
  j["padding"] = t.padding_coeffs;
  ordered_json emb;
  for (const auto& [tok, vec] : t.embedding) {
    ordered_json tv;
    for (const auto& [ch, v] : vec) tv[std::to_string(ch)] = rat_str(v);
    emb[tok] = std::move(tv);
  }
  j["embedding"] = std::move(emb);
  ordered_json blocks;
  auto emit = [&](const std::vector<sublayer>& b) {
    ordered_json arr = ordered_json::array();
    for (const auto& sl : b) arr.push_back(sublayer_to_json(sl));
    return arr;
  };
  blocks["setup"] = emit(t.setup);
  blocks["body"] = emit(t.body);
  blocks["readout"] = emit(t.epilogue);
  j["blocks"] = std::move(blocks);
  if (t.loop) {
    ordered_json lj;
    lj["c"] = t.loop->c;
    lj["d"] = t.loop->d;
    j["loop"] = std::move(lj);
  } else {
    j["loop"] = nullptr;
  }
  ordered_json ro;
  ro["rule"] = t.readout.rule;
  if (t.readout.rule == "argmax")
    ro["channels"] = t.readout.channels;
  else
    ro["channel"] = t.readout.channel;
  j["readout"] = std::move(ro);
  return j.dump(1);
}

transformer_ir deserialize_ir(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw std::domain_error(std::string("ir: malformed document: ") + e.what());
  }
  try {
    transformer_ir t;
    t.schema_version = j.at("schema_version").get<int>();
    if (t.schema_version != 1)
      throw std::domain_error("ir: unsupported schema version " +
                              std::to_string(t.schema_version));
    t.width = j.at("width").get<int>();
    t.alphabet = j.at("alphabet").get<std::vector<std::string>>();
    const auto& pe = j.at("position_encoding");
    std::string pk = pe.at("kind").get<std::string>();
    if (pk == "none")
      t.position_encoding = position_encoding_kind::none;
    else if (pk == "inverse_index")
      t.position_encoding = position_encoding_kind::inverse_index;
    else if (pk == "index_over_length")
      t.position_encoding = position_encoding_kind::index_over_length;
    else
      throw std::domain_error("ir: unknown position encoding '" + pk + "'");
    if (t.position_encoding != position_encoding_kind::none)
      t.pos_channel = pe.at("channel").get<int>();
    t.padding_coeffs = j.at("padding").get<std::vector<long>>();
    for (const auto& [tok, tv] : j.at("embedding").items()) {
      std::map<int, Rat> vec;
      for (const auto& [ch, v] : tv.items())
        vec[std::stoi(ch)] = parse_rat(v.get<std::string>());
      t.embedding[tok] = std::move(vec);
    }
    const auto& blocks = j.at("blocks");
    auto read_block = [&](const char* name, std::vector<sublayer>& out) {
      for (const auto& sj : blocks.at(name)) out.push_back(sublayer_from_json(sj));
    };
    read_block("setup", t.setup);
    read_block("body", t.body);
    read_block("readout", t.epilogue);
    if (!j.at("loop").is_null()) {
      loop_spec ls;
      ls.c = j.at("loop").at("c").get<long>();
      ls.d = j.at("loop").at("d").get<int>();
      t.loop = ls;
    }
    const auto& ro = j.at("readout");
    t.readout.rule = ro.at("rule").get<std::string>();
    if (t.readout.rule == "argmax")
      t.readout.channels = ro.at("channels").get<std::vector<int>>();
    else
      t.readout.channel = ro.at("channel").get<int>();
    return t;
  } catch (const ordered_json::exception& e) {
    throw std::domain_error(std::string("ir: malformed document: ") + e.what());
  }
}

void save_ir(const transformer_ir& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::domain_error("ir: cannot write " + path);
  out << serialize_ir(t) << "\n";
}

transformer_ir load_ir(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::domain_error("ir: cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_ir(ss.str());
}

}  // namespace ahat
