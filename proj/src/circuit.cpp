#include "ahat/circuit.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace ahat {

namespace {

const char* kind_name(gate_kind k) {
  switch (k) {
    case gate_kind::input: return "X";
    case gate_kind::g_and: return "AND";
    case gate_kind::g_or: return "OR";
    case gate_kind::g_not: return "NOT";
    case gate_kind::g_maj: return "MAJ";
  }
  return "?";
}

char kind_char(gate_kind k) {
  switch (k) {
    case gate_kind::input: return 'X';
    case gate_kind::g_and: return 'A';
    case gate_kind::g_or: return 'O';
    case gate_kind::g_not: return 'N';
    case gate_kind::g_maj: return 'M';
  }
  return '?';
}

void validate(const circuit& c) {
  int total = static_cast<int>(c.gates.size());
  if (total == 0) throw std::domain_error("circuit: no gates");
  for (int i = 0; i < total; ++i) {
    const gate& g = c.gates[static_cast<std::size_t>(i)];
    for (int a : g.args)
      if (a < 1 || a > total)
        throw std::domain_error("circuit: dangling pointer to gate " + std::to_string(a));
    switch (g.kind) {
      case gate_kind::input:
        if (!g.args.empty()) throw std::domain_error("circuit: X takes no arguments");
        break;
      case gate_kind::g_not:
        if (g.args.size() != 1)
          throw std::domain_error("circuit: NOT takes exactly one argument");
        break;
      default:
        if (g.args.empty())
          throw std::domain_error(std::string("circuit: ") + kind_name(g.kind) +
                                  " needs at least one argument");
        break;
    }
  }
  if (c.n_outputs < 1 || c.n_outputs > total)
    throw std::domain_error("circuit: bad output count");
  // acyclicity via iterative three-color DFS
  std::vector<int> color(static_cast<std::size_t>(total), 0);
  for (int root = 0; root < total; ++root) {
    if (color[static_cast<std::size_t>(root)] != 0) continue;
    std::vector<std::pair<int, std::size_t>> stack{{root, 0}};
    color[static_cast<std::size_t>(root)] = 1;
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      const auto& args = c.gates[static_cast<std::size_t>(v)].args;
      if (next == args.size()) {
        color[static_cast<std::size_t>(v)] = 2;
        stack.pop_back();
        continue;
      }
      int u = args[next++] - 1;
      if (color[static_cast<std::size_t>(u)] == 1)
        throw std::domain_error("circuit: cycle through gate " + std::to_string(u + 1));
      if (color[static_cast<std::size_t>(u)] == 0) {
        color[static_cast<std::size_t>(u)] = 1;
        stack.emplace_back(u, 0);
      }
    }
  }
}

struct token_stream {
  std::vector<std::string> toks;
  explicit token_stream(const std::string& text) {
    std::istringstream in(text);
    std::string t;
    while (in >> t) toks.push_back(t);
  }
};

int unary_value(const std::string& digits, const std::string& what) {
  if (digits.empty()) throw std::domain_error("circuit: empty " + what);
  for (char ch : digits)
    if (ch != '1') throw std::domain_error("circuit: bad " + what + " '" + digits + "'");
  return static_cast<int>(digits.size());
}

}  // namespace

int circuit::input_arity() const {
  int k = 0;
  for (const gate& g : gates)
    if (g.kind == gate_kind::input) ++k;
  return k;
}

std::vector<int> circuit::outputs() const {
  std::vector<int> out;
  int total = static_cast<int>(gates.size());
  for (int i = total - n_outputs + 1; i <= total; ++i) out.push_back(i);
  return out;
}

circuit parse_circuit(const std::string& text) {
  token_stream ts(text);
  circuit c;
  bool saw_out = false;
  for (std::size_t i = 0; i < ts.toks.size(); ++i) {
    const std::string& t = ts.toks[i];
    if (saw_out) throw std::domain_error("circuit: tokens after output marker");
    if (t == "X") {
      c.gates.push_back({gate_kind::input, {}});
    } else if (t == "AND") {
      c.gates.push_back({gate_kind::g_and, {}});
    } else if (t == "OR") {
      c.gates.push_back({gate_kind::g_or, {}});
    } else if (t == "NOT") {
      c.gates.push_back({gate_kind::g_not, {}});
    } else if (t == "MAJ") {
      c.gates.push_back({gate_kind::g_maj, {}});
    } else if (t[0] == '&') {
      if (c.gates.empty() || c.gates.back().kind == gate_kind::input)
        throw std::domain_error("circuit: argument without an operator");
      c.gates.back().args.push_back(unary_value(t.substr(1), "argument pointer"));
    } else if (t == "OUT") {
      if (i + 1 >= ts.toks.size()) throw std::domain_error("circuit: missing output count");
      c.n_outputs = unary_value(ts.toks[i + 1], "output count");
      ++i;
      saw_out = true;
    } else {
      throw std::domain_error("circuit: unknown token '" + t + "'");
    }
  }
  validate(c);
  return c;
}

std::string serialize_circuit(const circuit& c) {
  std::string out;
  for (const gate& g : c.gates) {
    if (!out.empty()) out += ' ';
    out += kind_name(g.kind);
    for (int a : g.args) out += " &" + std::string(static_cast<std::size_t>(a), '1');
  }
  if (c.n_outputs != 1) out += " OUT " + std::string(static_cast<std::size_t>(c.n_outputs), '1');
  return out;
}

std::string encode_circuit_chars(const circuit& c) {
  if (c.n_outputs != 1)
    throw std::domain_error("circuit: character encoding is single-output only");
  std::string out;
  for (const gate& g : c.gates) {
    out += kind_char(g.kind);
    for (int a : g.args) out += "&" + std::string(static_cast<std::size_t>(a), '1');
  }
  return out;
}

circuit parse_circuit_chars(const std::string& chars) {
  circuit c;
  std::size_t i = 0;
  while (i < chars.size()) {
    char ch = chars[i];
    gate_kind k;
    switch (ch) {
      case 'X': k = gate_kind::input; break;
      case 'A': k = gate_kind::g_and; break;
      case 'O': k = gate_kind::g_or; break;
      case 'N': k = gate_kind::g_not; break;
      case 'M': k = gate_kind::g_maj; break;
      case '&': {
        if (c.gates.empty() || c.gates.back().kind == gate_kind::input)
          throw std::domain_error("circuit: argument without an operator");
        std::size_t j = i + 1;
        while (j < chars.size() && chars[j] == '1') ++j;
        if (j == i + 1) throw std::domain_error("circuit: empty argument pointer");
        c.gates.back().args.push_back(static_cast<int>(j - i - 1));
        i = j;
        continue;
      }
      default:
        throw std::domain_error(std::string("circuit: unknown character '") + ch + "'");
    }
    c.gates.push_back({k, {}});
    ++i;
  }
  validate(c);
  return c;
}

std::vector<int> eval_circuit_gates(const circuit& c, const std::string& bits) {
  if (static_cast<int>(bits.size()) != c.input_arity())
    throw std::domain_error("circuit: input length does not match arity");
  for (char b : bits)
    if (b != '0' && b != '1') throw std::domain_error("circuit: input must be bits");
  int total = static_cast<int>(c.gates.size());
  std::vector<int> value(static_cast<std::size_t>(total), -1);
  // assign input ranks
  {
    int k = 0;
    for (int i = 0; i < total; ++i)
      if (c.gates[static_cast<std::size_t>(i)].kind == gate_kind::input)
        value[static_cast<std::size_t>(i)] = bits[static_cast<std::size_t>(k++)] - '0';
  }
  // iterative post-order evaluation (forward pointers allowed, graph acyclic)
  for (int root = 0; root < total; ++root) {
    if (value[static_cast<std::size_t>(root)] >= 0) continue;
    std::vector<std::pair<int, std::size_t>> stack{{root, 0}};
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      const gate& g = c.gates[static_cast<std::size_t>(v)];
      if (next < g.args.size()) {
        int u = g.args[next++] - 1;
        if (value[static_cast<std::size_t>(u)] < 0) stack.emplace_back(u, 0);
        continue;
      }
      int ones = 0;
      for (int a : g.args) ones += value[static_cast<std::size_t>(a - 1)];
      int arity = static_cast<int>(g.args.size());
      int r = 0;
      switch (g.kind) {
        case gate_kind::input: r = value[static_cast<std::size_t>(v)]; break;
        case gate_kind::g_and: r = (ones == arity) ? 1 : 0; break;
        case gate_kind::g_or: r = (ones > 0) ? 1 : 0; break;
        case gate_kind::g_not: r = 1 - ones; break;
        case gate_kind::g_maj: r = (2 * ones >= arity) ? 1 : 0; break;  // tie counts as 1
      }
      value[static_cast<std::size_t>(v)] = r;
      stack.pop_back();
    }
  }
  return value;
}

int eval_circuit(const circuit& c, const std::string& bits) {
  return eval_circuit_gates(c, bits)[c.gates.size() - 1];
}

std::string eval_circuit_outputs(const circuit& c, const std::string& bits) {
  auto vals = eval_circuit_gates(c, bits);
  std::string out;
  for (int idx : c.outputs()) out += static_cast<char>('0' + vals[static_cast<std::size_t>(idx - 1)]);
  return out;
}

std::vector<int> gate_depths(const circuit& c) {
  int total = static_cast<int>(c.gates.size());
  std::vector<int> depth(static_cast<std::size_t>(total), -1);
  for (int root = 0; root < total; ++root) {
    if (depth[static_cast<std::size_t>(root)] >= 0) continue;
    std::vector<std::pair<int, std::size_t>> stack{{root, 0}};
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      const gate& g = c.gates[static_cast<std::size_t>(v)];
      if (next < g.args.size()) {
        int u = g.args[next++] - 1;
        if (depth[static_cast<std::size_t>(u)] < 0) stack.emplace_back(u, 0);
        continue;
      }
      int d = 0;
      for (int a : g.args)
        d = std::max(d, 1 + depth[static_cast<std::size_t>(a - 1)]);
      depth[static_cast<std::size_t>(v)] = d;
      stack.pop_back();
    }
  }
  return depth;
}

int circuit_depth(const circuit& c) {
  auto d = gate_depths(c);
  return *std::max_element(d.begin(), d.end());
}

int circuit_size(const circuit& c) { return static_cast<int>(c.gates.size()); }

bool is_wide_witness(const circuit& c, long n, const Rat& c_param, int d) {
  if (n < 2) throw std::domain_error("circuit: witness check needs n >= 2");
  if (c_param <= 0) throw std::domain_error("circuit: witness parameter must be positive");
  // ceil(log2 n)
  long log_ceil = 0;
  for (long v = 1; v < n; v *= 2) ++log_ceil;
  Int p = num(c_param), q = den(c_param);
  // depth * q <= p * ceil(log2 n)^d
  Int depth_bound_rhs = p * pow_int(Int(log_ceil), static_cast<unsigned>(d));
  if (Int(circuit_depth(c)) * q > depth_bound_rhs) return false;
  // size >= n^(p/q)  <=>  size^q >= n^p   (all positive)
  if (q > 64 || p > 64) throw std::domain_error("circuit: witness exponent too large");
  Int lhs = pow_int(Int(circuit_size(c)), q.convert_to<unsigned>());
  Int rhs = pow_int(Int(n), p.convert_to<unsigned>());
  return lhs >= rhs;
}

circuit compose_serial(const circuit& f, const circuit& g) {
  if (g.input_arity() != f.n_outputs)
    throw std::domain_error("circuit: serial arity mismatch");
  circuit r;
  r.gates = f.gates;
  int off = static_cast<int>(f.gates.size());
  auto f_outs = f.outputs();
  // g's k-th input becomes an identity copy of f's k-th output
  int next_input = 0;
  std::vector<int> map_g(g.gates.size() + 1, 0);
  for (std::size_t i = 0; i < g.gates.size(); ++i)
    map_g[i + 1] = static_cast<int>(i) + 1 + off;
  for (const gate& gg : g.gates) {
    if (gg.kind == gate_kind::input) {
      r.gates.push_back({gate_kind::g_and, {f_outs[static_cast<std::size_t>(next_input++)]}});
    } else {
      gate ng{gg.kind, {}};
      for (int a : gg.args) ng.args.push_back(map_g[static_cast<std::size_t>(a)]);
      r.gates.push_back(ng);
    }
  }
  r.n_outputs = g.n_outputs;
  validate(r);
  return r;
}

circuit compose_parallel(const circuit& f, const circuit& g) {
  if (f.input_arity() != g.input_arity())
    throw std::domain_error("circuit: parallel arity mismatch");
  circuit r;
  // shared inputs: emit arity-many X gates, then both bodies with inputs remapped
  int arity = f.input_arity();
  for (int i = 0; i < arity; ++i) r.gates.push_back({gate_kind::input, {}});

  auto splice = [&](const circuit& src) {
    int off = static_cast<int>(r.gates.size());
    std::vector<int> map(src.gates.size() + 1, 0);
    int next_input = 0;
    // two passes: assign indices first (forward pointers), then append
    int non_input_at = off;
    for (std::size_t i = 0; i < src.gates.size(); ++i) {
      if (src.gates[i].kind == gate_kind::input) {
        map[i + 1] = ++next_input;  // shared X block at the front
      } else {
        map[i + 1] = ++non_input_at;
      }
    }
    for (const gate& gg : src.gates) {
      if (gg.kind == gate_kind::input) continue;
      gate ng{gg.kind, {}};
      for (int a : gg.args) ng.args.push_back(map[static_cast<std::size_t>(a)]);
      r.gates.push_back(ng);
    }
    std::vector<int> outs;
    for (int o : src.outputs()) outs.push_back(map[static_cast<std::size_t>(o)]);
    return outs;
  };

  auto f_outs = splice(f);
  auto g_outs = splice(g);
  // identity copies gather all outputs contiguously at the tail
  for (int o : f_outs) r.gates.push_back({gate_kind::g_and, {o}});
  for (int o : g_outs) r.gates.push_back({gate_kind::g_and, {o}});
  r.n_outputs = static_cast<int>(f_outs.size() + g_outs.size());
  validate(r);
  return r;
}

circuit compose_recurrent(const circuit& f, int repetitions) {
  if (repetitions < 1) throw std::domain_error("circuit: repetition count must be positive");
  if (f.input_arity() != f.n_outputs)
    throw std::domain_error("circuit: recurrent arity mismatch");
  circuit r = f;
  for (int i = 1; i < repetitions; ++i) r = compose_serial(r, f);
  return r;
}

}  // namespace ahat
