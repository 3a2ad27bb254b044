#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gppn/grid_mdp.hpp"

// Reverse-mode automatic differentiation over dense row-major arrays.
//
// A Tape records every operation of one forward pass. Each recorded node owns
// its value and, on demand, a gradient buffer of the same shape. backward()
// walks the nodes in reverse insertion order, which is a valid reverse
// topological order because inputs are always recorded before outputs.

namespace gppn::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(numel(shape_), fill) {
    for (auto d : shape_) require(d > 0, "tensor dimensions must be positive");
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) require(d > 0, "tensor dimensions must be positive");
    require(data_.size() == numel(shape_), "tensor data/shape size mismatch");
  }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    require(numel(shape) == data_.size(), "reshape: element count mismatch");
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  /// Leaf whose gradient is retained after backward().
  Var parameter(Tensor<T> value) { return push(std::move(value), true, {}); }

  Var record(Tensor<T> value, bool needs_grad, BackwardFn fn) {
    return push(std::move(value), needs_grad, needs_grad ? std::move(fn)
                                                         : BackwardFn{});
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Gradient of the last backward() target; zeros if the node was unused.
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Mutable gradient buffer, allocated as zeros on first access.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  Tensor<T>& grad_buffer(Var v) { return grad_buffer(v.id); }

  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Single-use: a tape may be differentiated once.
  void backward(Var loss) {
    if (used_) throw ContractViolation("backward: tape already differentiated");
    require(value(loss).size() == 1, "backward: loss must be a scalar");
    used_ = true;
    grad_buffer(loss)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, bool needs_grad, BackwardFn fn) {
    nodes_.push_back({std::move(value), {}, needs_grad, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool used_ = false;
};

// ---------------------------------------------------------------------------
// Elementwise primitives

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.shape() == bv.shape(), "add: shape mismatch");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const bool ng = tape.needs_grad(a) || tape.needs_grad(b);
  return tape.record(std::move(out), ng, [a, b](Tape<T>& t, std::size_t self) {
    const auto g = t.grad_buffer(self);
    for (Var in : {a, b}) {
      if (!t.needs_grad(in)) continue;
      auto& gi = t.grad_buffer(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.shape() == bv.shape(), "mul: shape mismatch");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const bool ng = tape.needs_grad(a) || tape.needs_grad(b);
  return tape.record(std::move(out), ng, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    if (t.needs_grad(a)) {
      const auto& bv = t.value(b);
      auto& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      const auto& av = t.value(a);
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Tensor<T> out = tape.value(a);
  for (auto& x : out.vec()) x *= factor;
  return tape.record(std::move(out), tape.needs_grad(a),
                     [a, factor](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad_buffer(self);
                       auto& ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         ga[i] += factor * g[i];
                     });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  const auto& av = tape.value(a);
  T s{0};
  for (T x : av.vec()) s += x;
  return tape.record(Tensor<T>({1}, s), tape.needs_grad(a),
                     [a](Tape<T>& t, std::size_t self) {
                       const T g = t.grad_buffer(self)[0];
                       auto& ga = t.grad_buffer(a);
                       for (auto& x : ga.vec()) x += g;
                     });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var a) {
  Tensor<T> out = tape.value(a);
  for (auto& x : out.vec()) x = T{1} / (T{1} + std::exp(-x));
  return tape.record(std::move(out), tape.needs_grad(a),
                     [a](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad_buffer(self);
                       const auto& y = t.value(Var{self});
                       auto& ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         ga[i] += g[i] * y[i] * (T{1} - y[i]);
                     });
}

template <typename T>
Var tanh(Tape<T>& tape, Var a) {
  Tensor<T> out = tape.value(a);
  for (auto& x : out.vec()) x = std::tanh(x);
  return tape.record(std::move(out), tape.needs_grad(a),
                     [a](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad_buffer(self);
                       const auto& y = t.value(Var{self});
                       auto& ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         ga[i] += g[i] * (T{1} - y[i] * y[i]);
                     });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
  Tensor<T> out = tape.value(a).reshaped(std::move(shape));
  return tape.record(std::move(out), tape.needs_grad(a),
                     [a](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad_buffer(self);
                       auto& ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     });
}

/// Concatenates C_i x H x W tensors along the leading (channel) axis.
template <typename T>
Var concat_channels(Tape<T>& tape, std::span<const Var> parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Shape& first = tape.value(parts[0]).shape();
  require(first.size() == 3, "concat_channels: inputs must be C x H x W");
  std::size_t channels = 0;
  bool ng = false;
  for (Var p : parts) {
    const Shape& s = tape.value(p).shape();
    require(s.size() == 3 && s[1] == first[1] && s[2] == first[2],
            "concat_channels: spatial shape mismatch");
    channels += s[0];
    ng = ng || tape.needs_grad(p);
  }
  std::vector<T> data;
  data.reserve(channels * first[1] * first[2]);
  for (Var p : parts) {
    const auto& v = tape.value(p).vec();
    data.insert(data.end(), v.begin(), v.end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record(
      Tensor<T>({channels, first[1], first[2]}, std::move(data)), ng,
      [inputs](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        std::size_t offset = 0;
        for (Var p : inputs) {
          const std::size_t n = t.value(p).size();
          if (t.needs_grad(p)) {
            auto& gp = t.grad_buffer(p);
            for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
          }
          offset += n;
        }
      });
}

template <typename T>
Var concat_channels(Tape<T>& tape, std::initializer_list<Var> parts) {
  return concat_channels(tape, std::span<const Var>(parts.begin(), parts.size()));
}

/// Matrix transpose of a rank-2 tensor.
template <typename T>
Var transpose(Tape<T>& tape, Var a) {
  const auto& av = tape.value(a);
  require(av.rank() == 2, "transpose: rank-2 input required");
  const std::size_t r = av.dim(0), c = av.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return tape.record(std::move(out), tape.needs_grad(a),
                     [a, r, c](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad_buffer(self);
                       auto& ga = t.grad_buffer(a);
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           ga[i * c + j] += g[j * r + i];
                     });
}

// ---------------------------------------------------------------------------
// Convolutions

/// "Same" cross-correlation with stride 1 and zero padding (F-1)/2.
/// input C_in x H x W, weight C_out x C_in x F x F, optional bias C_out.
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, std::optional<Var> bias) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(weight);
  require(x.rank() == 3, "conv2d: input must be C x H x W");
  require(w.rank() == 4 && w.dim(2) == w.dim(3), "conv2d: weight must be O x I x F x F");
  require(w.dim(1) == x.dim(0), "conv2d: channel mismatch");
  require(w.dim(2) % 2 == 1, "conv2d: kernel size must be odd");
  const int cin = static_cast<int>(x.dim(0));
  const int h = static_cast<int>(x.dim(1)), wd = static_cast<int>(x.dim(2));
  const int cout = static_cast<int>(w.dim(0));
  const int f = static_cast<int>(w.dim(2));
  const int pad = (f - 1) / 2;
  if (bias) {
    const auto& b = tape.value(*bias);
    require(b.rank() == 1 && static_cast<int>(b.dim(0)) == cout,
            "conv2d: bias must have C_out entries");
  }

  Tensor<T> out({static_cast<std::size_t>(cout), x.dim(1), x.dim(2)});
  const std::size_t plane = static_cast<std::size_t>(h) * wd;
  for (int co = 0; co < cout; ++co) {
    T* o = out.data() + co * plane;
    if (bias) std::fill(o, o + plane, tape.value(*bias)[co]);
    for (int ci = 0; ci < cin; ++ci) {
      const T* xi = x.data() + ci * plane;
      const T* wk = w.data() + (static_cast<std::size_t>(co) * cin + ci) * f * f;
      for (int ky = 0; ky < f; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
        for (int kx = 0; kx < f; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
          const T wv = wk[ky * f + kx];
          for (int yy = y0; yy < y1; ++yy) {
            T* orow = o + yy * wd;
            const T* irow = xi + (yy + dy) * wd + dx;
            for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
          }
        }
      }
    }
  }

  const bool ng = tape.needs_grad(input) || tape.needs_grad(weight) ||
                  (bias && tape.needs_grad(*bias));
  return tape.record(
      std::move(out), ng,
      [=](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& xv = t.value(input);
        const auto& wv = t.value(weight);
        if (bias && t.needs_grad(*bias)) {
          auto& gb = t.grad_buffer(*bias);
          for (int co = 0; co < cout; ++co) {
            T s{0};
            for (std::size_t i = 0; i < plane; ++i) s += g[co * plane + i];
            gb[co] += s;
          }
        }
        const bool gx_needed = t.needs_grad(input);
        const bool gw_needed = t.needs_grad(weight);
        T* gx = gx_needed ? t.grad_buffer(input).data() : nullptr;
        T* gw = gw_needed ? t.grad_buffer(weight).data() : nullptr;
        for (int co = 0; co < cout; ++co) {
          const T* go = g.data() + co * plane;
          for (int ci = 0; ci < cin; ++ci) {
            const T* xi = xv.data() + ci * plane;
            const std::size_t wbase = (static_cast<std::size_t>(co) * cin + ci) * f * f;
            for (int ky = 0; ky < f; ++ky) {
              const int dy = ky - pad;
              const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
              for (int kx = 0; kx < f; ++kx) {
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                const T wk = wv[wbase + ky * f + kx];
                T acc{0};
                for (int yy = y0; yy < y1; ++yy) {
                  const T* grow = go + yy * wd;
                  const std::size_t ioff = ci * plane + (yy + dy) * wd + dx;
                  if (gx) {
                    T* gxrow = gx + ioff;
                    for (int xx = x0; xx < x1; ++xx) gxrow[xx] += wk * grow[xx];
                  }
                  if (gw) {
                    const T* irow = xi + (yy + dy) * wd + dx;
                    for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * irow[xx];
                  }
                }
                if (gw) gw[wbase + ky * f + kx] += acc;
              }
            }
          }
        }
      });
}

/// Position-wise (untied) "same" convolution. weight has shape
/// (C_out*C_in*F*F) x H x W: every output position owns its own filter bank,
/// channel index ((co*C_in + ci)*F + ky)*F + kx. Accumulation order per output
/// matches conv2d, so position-constant weights reproduce conv2d bitwise.
template <typename T>
Var local_conv2d(Tape<T>& tape, Var input, Var weight, int cout, int f) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(weight);
  require(x.rank() == 3 && w.rank() == 3, "local_conv2d: rank-3 tensors required");
  require(f % 2 == 1 && f >= 1 && cout >= 1, "local_conv2d: invalid kernel");
  const int cin = static_cast<int>(x.dim(0));
  const int h = static_cast<int>(x.dim(1)), wd = static_cast<int>(x.dim(2));
  require(w.dim(0) == static_cast<std::size_t>(cout) * cin * f * f &&
              w.dim(1) == x.dim(1) && w.dim(2) == x.dim(2),
          "local_conv2d: weight shape mismatch");
  const int pad = (f - 1) / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * wd;

  Tensor<T> out({static_cast<std::size_t>(cout), x.dim(1), x.dim(2)});
  for (int co = 0; co < cout; ++co) {
    T* o = out.data() + co * plane;
    for (int ci = 0; ci < cin; ++ci) {
      const T* xi = x.data() + ci * plane;
      for (int ky = 0; ky < f; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
        for (int kx = 0; kx < f; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
          const T* wk =
              w.data() + (((static_cast<std::size_t>(co) * cin + ci) * f + ky) * f + kx) * plane;
          for (int yy = y0; yy < y1; ++yy) {
            T* orow = o + yy * wd;
            const T* wrow = wk + yy * wd;
            const T* irow = xi + (yy + dy) * wd + dx;
            for (int xx = x0; xx < x1; ++xx) orow[xx] += wrow[xx] * irow[xx];
          }
        }
      }
    }
  }

  const bool ng = tape.needs_grad(input) || tape.needs_grad(weight);
  return tape.record(std::move(out), ng, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& xv = t.value(input);
    const auto& wv = t.value(weight);
    T* gx = t.needs_grad(input) ? t.grad_buffer(input).data() : nullptr;
    T* gw = t.needs_grad(weight) ? t.grad_buffer(weight).data() : nullptr;
    for (int co = 0; co < cout; ++co) {
      const T* go = g.data() + co * plane;
      for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < f; ++ky) {
          const int dy = ky - pad;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          for (int kx = 0; kx < f; ++kx) {
            const int dx = kx - pad;
            const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
            const std::size_t wbase =
                (((static_cast<std::size_t>(co) * cin + ci) * f + ky) * f + kx) * plane;
            for (int yy = y0; yy < y1; ++yy) {
              const T* grow = go + yy * wd;
              const std::size_t ioff = ci * plane + (yy + dy) * wd + dx;
              for (int xx = x0; xx < x1; ++xx) {
                if (gx) gx[ioff + xx] += wv[wbase + yy * wd + xx] * grow[xx];
                if (gw) gw[wbase + yy * wd + xx] += xv[ioff + xx] * grow[xx];
              }
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
struct ChannelMax {
  Var values;                  // 1 x H x W
  std::vector<int> argmax;     // H*W channel indices
};

/// Per-position max over the channel axis; ties resolve to the lowest channel.
template <typename T>
ChannelMax<T> channel_max(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  require(x.rank() == 3 && x.dim(0) >= 1, "channel_max: input must be A x H x W");
  const std::size_t a = x.dim(0);
  const std::size_t plane = x.dim(1) * x.dim(2);
  Tensor<T> out({1, x.dim(1), x.dim(2)});
  std::vector<int> arg(plane, 0);
  std::copy(x.data(), x.data() + plane, out.data());
  for (std::size_t c = 1; c < a; ++c) {
    const T* xc = x.data() + c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      if (xc[p] > out[p]) {
        out[p] = xc[p];
        arg[p] = static_cast<int>(c);
      }
    }
  }
  Var v = tape.record(std::move(out), tape.needs_grad(input),
                      [input, arg, plane](Tape<T>& t, std::size_t self) {
                        const auto& g = t.grad_buffer(self);
                        auto& gi = t.grad_buffer(input);
                        for (std::size_t p = 0; p < plane; ++p)
                          gi[arg[p] * plane + p] += g[p];
                      });
  return {v, std::move(arg)};
}

/// Rows of the output pick `width` consecutive channels starting at
/// channel_base[r], at spatial position position[r], from a C x H x W input.
template <typename T>
Var gather_positions(Tape<T>& tape, Var input, std::vector<int> channel_base,
                     std::vector<int> position, int width) {
  const auto& x = tape.value(input);
  require(x.rank() == 3, "gather_positions: input must be C x H x W");
  require(channel_base.size() == position.size() && !position.empty(),
          "gather_positions: index lists must match and be nonempty");
  const std::size_t plane = x.dim(1) * x.dim(2);
  const std::size_t rows = position.size();
  for (std::size_t r = 0; r < rows; ++r) {
    require(channel_base[r] >= 0 &&
                static_cast<std::size_t>(channel_base[r] + width) <= x.dim(0) &&
                position[r] >= 0 && static_cast<std::size_t>(position[r]) < plane,
            "gather_positions: index out of range");
  }
  Tensor<T> out({rows, static_cast<std::size_t>(width)});
  for (std::size_t r = 0; r < rows; ++r)
    for (int a = 0; a < width; ++a)
      out[r * width + a] = x[(channel_base[r] + a) * plane + position[r]];
  return tape.record(
      std::move(out), tape.needs_grad(input),
      [input, channel_base = std::move(channel_base),
       position = std::move(position), width, plane](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        auto& gi = t.grad_buffer(input);
        for (std::size_t r = 0; r < position.size(); ++r)
          for (int a = 0; a < width; ++a)
            gi[(channel_base[r] + a) * plane + position[r]] += g[r * width + a];
      });
}

/// Mean negative log-softmax of the labelled class over rows with
/// mask[r] != 0.
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::vector<int> labels,
                          std::vector<char> mask) {
  const auto& z = tape.value(logits);
  require(z.rank() == 2, "softmax_cross_entropy: logits must be N x A");
  const std::size_t n = z.dim(0), a = z.dim(1);
  require(labels.size() == n && mask.size() == n,
          "softmax_cross_entropy: label/mask length mismatch");
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!mask[r]) continue;
    require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < a,
            "softmax_cross_entropy: label out of range");
    ++count;
  }
  require(count > 0, "softmax_cross_entropy: empty mask");

  Tensor<T> probs({n, a});
  T loss{0};
  for (std::size_t r = 0; r < n; ++r) {
    if (!mask[r]) continue;
    const T* row = z.data() + r * a;
    const T mx = *std::max_element(row, row + a);
    T denom{0};
    for (std::size_t j = 0; j < a; ++j) {
      probs[r * a + j] = std::exp(row[j] - mx);
      denom += probs[r * a + j];
    }
    for (std::size_t j = 0; j < a; ++j) probs[r * a + j] /= denom;
    loss += std::log(denom) + mx - row[labels[r]];
  }
  const T inv = T{1} / static_cast<T>(count);
  return tape.record(
      Tensor<T>({1}, loss * inv), tape.needs_grad(logits),
      [logits, labels = std::move(labels), mask = std::move(mask),
       probs = std::move(probs), inv, a](Tape<T>& t, std::size_t self) {
        const T g = t.grad_buffer(self)[0] * inv;
        auto& gz = t.grad_buffer(logits);
        for (std::size_t r = 0; r < labels.size(); ++r) {
          if (!mask[r]) continue;
          for (std::size_t j = 0; j < a; ++j) gz[r * a + j] += g * probs[r * a + j];
          gz[r * a + labels[r]] -= g;
        }
      });
}

// ---------------------------------------------------------------------------
// LSTM

template <typename T>
struct LstmParams {
  Var weight;  // 4H x (I + H); gate blocks ordered input, forget, cell, output
  Var bias;    // 4H
};

/// Gate activations of an LSTM step, B x 4H with sigmoid applied to the
/// input/forget/output blocks and tanh to the cell block.
template <typename T>
Var lstm_gates(Tape<T>& tape, Var x, Var h, const LstmParams<T>& p) {
  const auto& xv = tape.value(x);
  const auto& hv = tape.value(h);
  const auto& w = tape.value(p.weight);
  const auto& b = tape.value(p.bias);
  require(xv.rank() == 2 && hv.rank() == 2 && xv.dim(0) == hv.dim(0),
          "lstm: x and h must be B x I and B x H");
  const std::size_t batch = xv.dim(0), in = xv.dim(1), hid = hv.dim(1);
  const std::size_t cols = in + hid, g4 = 4 * hid;
  require(w.rank() == 2 && w.dim(0) == g4 && w.dim(1) == cols,
          "lstm: weight must be 4H x (I+H)");
  require(b.rank() == 1 && b.dim(0) == g4, "lstm: bias must have 4H entries");

  Tensor<T> acts({batch, g4});
  std::vector<T> row(cols);
  for (std::size_t r = 0; r < batch; ++r) {
    std::copy(xv.data() + r * in, xv.data() + (r + 1) * in, row.begin());
    std::copy(hv.data() + r * hid, hv.data() + (r + 1) * hid, row.begin() + in);
    T* out = acts.data() + r * g4;
    for (std::size_t g = 0; g < g4; ++g) {
      const T* wg = w.data() + g * cols;
      T s = b[g];
      for (std::size_t k = 0; k < cols; ++k) s += wg[k] * row[k];
      out[g] = s;
    }
    for (std::size_t g = 0; g < g4; ++g) {
      const bool is_cell = g >= 2 * hid && g < 3 * hid;
      out[g] = is_cell ? std::tanh(out[g]) : T{1} / (T{1} + std::exp(-out[g]));
    }
  }

  const bool ng = tape.needs_grad(x) || tape.needs_grad(h) ||
                  tape.needs_grad(p.weight) || tape.needs_grad(p.bias);
  return tape.record(std::move(acts), ng, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_buffer(self);
    const auto& a = t.value(Var{self});
    const auto& xv = t.value(x);
    const auto& hv = t.value(h);
    const auto& wv = t.value(p.weight);
    T* gx = t.needs_grad(x) ? t.grad_buffer(x).data() : nullptr;
    T* gh = t.needs_grad(h) ? t.grad_buffer(h).data() : nullptr;
    T* gw = t.needs_grad(p.weight) ? t.grad_buffer(p.weight).data() : nullptr;
    T* gb = t.needs_grad(p.bias) ? t.grad_buffer(p.bias).data() : nullptr;
    std::vector<T> dz(g4), row(cols), drow(cols);
    for (std::size_t r = 0; r < batch; ++r) {
      const T* ar = a.data() + r * g4;
      const T* gr = g.data() + r * g4;
      for (std::size_t k = 0; k < g4; ++k) {
        const bool is_cell = k >= 2 * hid && k < 3 * hid;
        dz[k] = is_cell ? gr[k] * (T{1} - ar[k] * ar[k])
                        : gr[k] * ar[k] * (T{1} - ar[k]);
      }
      std::copy(xv.data() + r * in, xv.data() + (r + 1) * in, row.begin());
      std::copy(hv.data() + r * hid, hv.data() + (r + 1) * hid, row.begin() + in);
      std::fill(drow.begin(), drow.end(), T{0});
      for (std::size_t k = 0; k < g4; ++k) {
        const T d = dz[k];
        if (gb) gb[k] += d;
        const T* wk = wv.data() + k * cols;
        if (gw) {
          T* gwk = gw + k * cols;
          for (std::size_t c = 0; c < cols; ++c) gwk[c] += d * row[c];
        }
        for (std::size_t c = 0; c < cols; ++c) drow[c] += d * wk[c];
      }
      if (gx)
        for (std::size_t c = 0; c < in; ++c) gx[r * in + c] += drow[c];
      if (gh)
        for (std::size_t c = 0; c < hid; ++c) gh[r * hid + c] += drow[in + c];
    }
  });
}

template <typename T>
struct LstmState {
  Var h;
  Var c;
};

/// Standard LSTM step: c' = f*c + i*g, h' = o*tanh(c').
/// x is B x I, h and c are B x H.
template <typename T>
LstmState<T> lstm_cell(Tape<T>& tape, Var x, Var h, Var c,
                       const LstmParams<T>& p) {
  const Var acts = lstm_gates(tape, x, h, p);
  const auto& cv = tape.value(c);
  require(cv.shape() == tape.value(h).shape(), "lstm: c must match h");
  const std::size_t batch = cv.dim(0), hid = cv.dim(1), g4 = 4 * hid;

  const auto& av = tape.value(acts);
  Tensor<T> c_next({batch, hid});
  for (std::size_t r = 0; r < batch; ++r) {
    const T* ar = av.data() + r * g4;
    for (std::size_t j = 0; j < hid; ++j)
      c_next[r * hid + j] = ar[hid + j] * cv[r * hid + j] + ar[j] * ar[2 * hid + j];
  }
  const Var c_out = tape.record(
      std::move(c_next), tape.needs_grad(acts) || tape.needs_grad(c),
      [acts, c, batch, hid, g4](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& av = t.value(acts);
        const auto& cv = t.value(c);
        T* ga = t.needs_grad(acts) ? t.grad_buffer(acts).data() : nullptr;
        T* gc = t.needs_grad(c) ? t.grad_buffer(c).data() : nullptr;
        for (std::size_t r = 0; r < batch; ++r) {
          const T* ar = av.data() + r * g4;
          for (std::size_t j = 0; j < hid; ++j) {
            const T gj = g[r * hid + j];
            if (ga) {
              ga[r * g4 + j] += gj * ar[2 * hid + j];
              ga[r * g4 + hid + j] += gj * cv[r * hid + j];
              ga[r * g4 + 2 * hid + j] += gj * ar[j];
            }
            if (gc) gc[r * hid + j] += gj * ar[hid + j];
          }
        }
      });

  const auto& cn = tape.value(c_out);
  Tensor<T> h_next({batch, hid});
  for (std::size_t r = 0; r < batch; ++r) {
    const T* ar = tape.value(acts).data() + r * g4;
    for (std::size_t j = 0; j < hid; ++j)
      h_next[r * hid + j] = ar[3 * hid + j] * std::tanh(cn[r * hid + j]);
  }
  const Var h_out = tape.record(
      std::move(h_next), tape.needs_grad(acts) || tape.needs_grad(c_out),
      [acts, c_out, batch, hid, g4](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self);
        const auto& av = t.value(acts);
        const auto& cv = t.value(c_out);
        T* ga = t.needs_grad(acts) ? t.grad_buffer(acts).data() : nullptr;
        T* gc = t.needs_grad(c_out) ? t.grad_buffer(c_out).data() : nullptr;
        for (std::size_t r = 0; r < batch; ++r) {
          const T* ar = av.data() + r * g4;
          for (std::size_t j = 0; j < hid; ++j) {
            const T gj = g[r * hid + j];
            const T tc = std::tanh(cv[r * hid + j]);
            if (ga) ga[r * g4 + 3 * hid + j] += gj * tc;
            if (gc) gc[r * hid + j] += gj * ar[3 * hid + j] * (T{1} - tc * tc);
          }
        }
      });
  return {h_out, c_out};
}

}  // namespace gppn::ad
