#pragma once

#include <string>
#include <vector>

#include "ahat/rational.hpp"

namespace ahat {

enum class gate_kind { input, g_and, g_or, g_not, g_maj };

struct gate {
  gate_kind kind;
  std::vector<int> args;  // 1-based gate indices; forward references are legal
};

struct circuit {
  std::vector<gate> gates;
  int n_outputs = 1;  // outputs are the last n_outputs gates in serialization order

  int input_arity() const;
  std::vector<int> outputs() const;  // 1-based indices
  int output_gate() const { return static_cast<int>(gates.size()); }
};

// Text format: whitespace-separated tokens X / AND / OR / NOT / MAJ, each op
// followed by its arguments as unary pointers &1^j (gate j); the k-th X gate is
// the k-th input bit and the final gate is the output. An optional trailing
// "OUT 1^m" marker declares the last m gates as outputs (format version 2).
circuit parse_circuit(const std::string& text);
std::string serialize_circuit(const circuit& c);

// compact single-character stream over {X,A,O,N,M,&,1} for transformer input
std::string encode_circuit_chars(const circuit& c);
circuit parse_circuit_chars(const std::string& chars);

std::vector<int> eval_circuit_gates(const circuit& c, const std::string& bits);
int eval_circuit(const circuit& c, const std::string& bits);           // final gate
std::string eval_circuit_outputs(const circuit& c, const std::string& bits);

std::vector<int> gate_depths(const circuit& c);
int circuit_depth(const circuit& c);  // max over all gates
int circuit_size(const circuit& c);

// depth(c) <= c_param * ceil(log2 n)^d  and  size(c) >= n^c_param, exactly
bool is_wide_witness(const circuit& c, long n, const Rat& c_param, int d);

circuit compose_serial(const circuit& f, const circuit& g);
circuit compose_parallel(const circuit& f, const circuit& g);
circuit compose_recurrent(const circuit& f, int repetitions);

}  // namespace ahat
