#include "edf/tape.hpp"

#include <atomic>
#include <optional>

#include "edf/ops.hpp"

namespace edf {

namespace {
thread_local Tape* g_active = nullptr;
thread_local bool g_recording = true;
std::atomic<std::uint64_t> g_next_tape_id{1};
}  // namespace

Tape* active_tape() { return g_active; }
bool recording_enabled() { return g_recording; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

NoRecordScope::NoRecordScope() : previous_(g_recording) { g_recording = false; }
NoRecordScope::~NoRecordScope() { g_recording = previous_; }

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

Tensor Tape::attach(Tensor t, int node) const {
  t.tape_id_ = id_;
  t.node_ = node;
  return t;
}

Tensor Tape::watch(const Tensor& t) {
  if (!t.defined()) throw TapeError("cannot watch an undefined tensor");
  int node = append("leaf", {}, {});
  return attach(t.detach(), node);
}

int Tape::append(std::string_view op, std::vector<int> inputs, BackwardFn backward) {
  int id = static_cast<int>(records_.size());
  records_.push_back(OpRecord{op, std::move(inputs), id, std::move(backward)});
  return id;
}

std::vector<Tensor> Tape::grad(const Tensor& output, std::span<const Tensor> wrt,
                               bool create_graph) {
  if (!owns(output)) throw TapeError("grad: output is not on this tape");
  if (output.numel() != 1) {
    throw TapeError("grad: output must be scalar, got shape " + shape_str(output.shape()));
  }
  const int out = output.node();
  std::vector<char> relevant(static_cast<std::size_t>(out) + 1, 0);
  std::vector<char> is_wrt(static_cast<std::size_t>(out) + 1, 0);
  for (const auto& w : wrt) {
    if (!owns(w)) throw TapeError("grad: wrt tensor is not on this tape");
    if (w.node() <= out) relevant[w.node()] = is_wrt[w.node()] = 1;
  }
  for (int i = 0; i <= out; ++i) {
    if (relevant[i]) continue;
    for (int in : records_[i].inputs) {
      if (in >= 0 && relevant[in]) {
        relevant[i] = 1;
        break;
      }
    }
  }

  TapeScope scope(*this);
  std::optional<NoRecordScope> no_record;
  if (!create_graph) no_record.emplace();

  std::vector<Tensor> adjoint(static_cast<std::size_t>(out) + 1);
  adjoint[out] = Tensor::full(output.shape(), 1.0);
  for (int i = out; i >= 0; --i) {
    if (!relevant[i] || !adjoint[i].defined()) continue;
    const OpRecord& rec = records_[i];
    if (!rec.backward) continue;
    std::vector<bool> needs(rec.inputs.size());
    bool any = false;
    for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
      needs[k] = rec.inputs[k] >= 0 && relevant[rec.inputs[k]];
      any = any || needs[k];
    }
    if (!any) continue;
    std::vector<Tensor> grads = rec.backward(adjoint[i], needs);
    for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
      if (!needs[k] || !grads.at(k).defined()) continue;
      Tensor& acc = adjoint[rec.inputs[k]];
      acc = acc.defined() ? add(acc, grads[k]) : grads[k];
    }
    if (i != out && !is_wrt[i]) adjoint[i] = Tensor();  // release
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    if (w.node() <= out && adjoint[w.node()].defined()) {
      result.push_back(adjoint[w.node()]);
    } else {
      result.push_back(Tensor::zeros(w.shape()));
    }
  }
  return result;
}

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt, bool create_graph) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw TapeError("grad: no active tape");
  return tape->grad(output, wrt, create_graph);
}

Tensor grad(const Tensor& output, const Tensor& wrt, bool create_graph) {
  return grad(output, std::span<const Tensor>(&wrt, 1), create_graph).front();
}

}  // namespace edf
