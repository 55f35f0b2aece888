#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "ssmlab/tape.hpp"

namespace ssmlab {

namespace {

using Eigen::ArrayXd;

// im2col buffer for one example: (Cin*k) x L, column t holds the receptive
// field of output position t under the centered alignment.
void fill_columns(const Tensor& x, Index b, Index cin, Index len, Index k,
                  Eigen::MatrixXd& cols) {
  const Index offset = (k - 1) / 2;
  cols.setZero();
  for (Index i = 0; i < cin; ++i) {
    const double* row = x.data() + (b * cin + i) * len;
    for (Index j = 0; j < k; ++j) {
      const Index shift = j - offset;
      const Index t0 = std::max<Index>(0, -shift);
      const Index t1 = std::min<Index>(len, len - shift);
      for (Index t = t0; t < t1; ++t) cols(i * k + j, t) = row[t + shift];
    }
  }
}

// Scatter-add the column-space gradient back to the input layout.
void columns_to_input(const Eigen::MatrixXd& dcols, Index b, Index cin, Index len, Index k,
                      Tensor& dx) {
  const Index offset = (k - 1) / 2;
  for (Index i = 0; i < cin; ++i) {
    double* row = dx.data() + (b * cin + i) * len;
    for (Index j = 0; j < k; ++j) {
      const Index shift = j - offset;
      const Index t0 = std::max<Index>(0, -shift);
      const Index t1 = std::min<Index>(len, len - shift);
      for (Index t = t0; t < t1; ++t) row[t + shift] += dcols(i * k + j, t);
    }
  }
}

}  // namespace

VarId add(Tape& tape, VarId a, VarId b) {
  const Tensor& va = tape.value(a);
  const Tensor& vb = tape.value(b);
  require_same_shape(va, vb, "add");
  Tensor out(va.shape());
  out.array() = va.array() + vb.array();
  return tape.record(std::move(out), [a, b](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

VarId mul(Tape& tape, VarId a, VarId b) {
  const Tensor& va = tape.value(a);
  const Tensor& vb = tape.value(b);
  require_same_shape(va, vb, "mul");
  Tensor out(va.shape());
  out.array() = va.array() * vb.array();
  return tape.record(std::move(out), [a, b](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    Tensor da(g.shape()), db(g.shape());
    da.array() = g.array() * t.value(b).array();
    db.array() = g.array() * t.value(a).array();
    t.accumulate(a, da);
    t.accumulate(b, db);
  });
}

VarId matmul(Tape& tape, VarId a, VarId b) {
  const Tensor& va = tape.value(a);
  const Tensor& vb = tape.value(b);
  require_rank(va, 2, "matmul");
  require_rank(vb, 2, "matmul");
  if (va.dim(1) != vb.dim(0)) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_to_string(va.shape()) + " vs " +
                                shape_to_string(vb.shape()));
  }
  const Index r = va.dim(0), k = va.dim(1), c = vb.dim(1);
  Tensor out({r, c});
  out.as_matrix(r, c).noalias() = va.as_matrix(r, k) * vb.as_matrix(k, c);
  return tape.record(std::move(out), [a, b, r, k, c](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    Tensor da({r, k}), db({k, c});
    da.as_matrix(r, k).noalias() = g.as_matrix(r, c) * t.value(b).as_matrix(k, c).transpose();
    db.as_matrix(k, c).noalias() = t.value(a).as_matrix(r, k).transpose() * g.as_matrix(r, c);
    t.accumulate(a, da);
    t.accumulate(b, db);
  });
}

VarId relu(Tape& tape, VarId x) {
  const Tensor& vx = tape.value(x);
  Tensor out(vx.shape());
  out.array() = vx.array().max(0.0);
  return tape.record(std::move(out), [x](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    const Tensor& vx = t.value(x);
    Tensor dx(g.shape());
    dx.array() = (vx.array() > 0.0).select(g.array(), 0.0);
    t.accumulate(x, dx);
  });
}

VarId exp_elem(Tape& tape, VarId x) {
  const Tensor& vx = tape.value(x);
  Tensor out(vx.shape());
  out.array() = vx.array().exp();
  require_finite(out, "exp");
  return tape.record(std::move(out), [x](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    Tensor dx(g.shape());
    dx.array() = g.array() * t.value(self).array();
    t.accumulate(x, dx);
  });
}

VarId log_elem(Tape& tape, VarId x) {
  const Tensor& vx = tape.value(x);
  if ((vx.array() <= 0.0).any()) throw std::invalid_argument("log: non-positive input");
  Tensor out(vx.shape());
  out.array() = vx.array().log();
  return tape.record(std::move(out), [x](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    Tensor dx(g.shape());
    dx.array() = g.array() / t.value(x).array();
    t.accumulate(x, dx);
  });
}

VarId reshape(Tape& tape, VarId x, Shape shape) {
  const Tensor& vx = tape.value(x);
  if (shape_numel(shape) != vx.size()) {
    throw std::invalid_argument("reshape: shape mismatch " + shape_to_string(vx.shape()) + " vs " +
                                shape_to_string(shape));
  }
  Tensor out(std::move(shape), vx.array());
  Shape orig = vx.shape();
  return tape.record(std::move(out), [x, orig = std::move(orig)](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    t.accumulate(x, Tensor(orig, g.array()));
  });
}

VarId conv1d(Tape& tape, VarId x, VarId w, VarId bias) {
  const Tensor& vx = tape.value(x);
  const Tensor& vw = tape.value(w);
  const Tensor& vb = tape.value(bias);
  require_rank(vx, 3, "conv1d input");
  require_rank(vw, 3, "conv1d weight");
  if (vx.dim(1) != vw.dim(1)) {
    throw std::invalid_argument("conv1d: input channels mismatch " + shape_to_string(vx.shape()) +
                                " vs weight " + shape_to_string(vw.shape()));
  }
  const Index batch = vx.dim(0), cin = vx.dim(1), len = vx.dim(2);
  const Index cout = vw.dim(0), k = vw.dim(2);
  if (vb.size() != cout) {
    throw std::invalid_argument("conv1d: bias shape " + shape_to_string(vb.shape()) +
                                " does not match weight " + shape_to_string(vw.shape()));
  }
  if (k < 1 || k > len) {
    throw std::invalid_argument("conv1d: kernel width " + std::to_string(k) +
                                " out of range for length " + std::to_string(len));
  }

  Tensor out({batch, cout, len});
  Eigen::MatrixXd cols(cin * k, len);
  for (Index b = 0; b < batch; ++b) {
    fill_columns(vx, b, cin, len, k, cols);
    Tensor::MatrixMap yb(out.data() + b * cout * len, cout, len);
    yb.noalias() = vw.as_matrix(cout, cin * k) * cols;
    yb.colwise() += Eigen::Map<const Eigen::VectorXd>(vb.data(), cout);
  }

  return tape.record(std::move(out), [x, w, bias, batch, cin, len, cout, k](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    Tensor dx(vx.shape()), dw(vw.shape()), db(t.value(bias).shape());
    Eigen::MatrixXd cols(cin * k, len);
    Eigen::MatrixXd dcols(cin * k, len);
    auto dw_map = dw.as_matrix(cout, cin * k);
    auto db_vec = Eigen::Map<Eigen::VectorXd>(db.data(), cout);
    for (Index b = 0; b < batch; ++b) {
      Tensor::ConstMatrixMap gb(g.data() + b * cout * len, cout, len);
      fill_columns(vx, b, cin, len, k, cols);
      dw_map.noalias() += gb * cols.transpose();
      db_vec.noalias() += gb.rowwise().sum();
      dcols.noalias() = vw.as_matrix(cout, cin * k).transpose() * gb;
      columns_to_input(dcols, b, cin, len, k, dx);
    }
    t.accumulate(x, dx);
    t.accumulate(w, dw);
    t.accumulate(bias, db);
  });
}

VarId depthwise_conv1d(Tape& tape, VarId x, VarId w, VarId bias) {
  const Tensor& vx = tape.value(x);
  const Tensor& vw = tape.value(w);
  const Tensor& vb = tape.value(bias);
  require_rank(vx, 3, "depthwise_conv1d input");
  require_rank(vw, 2, "depthwise_conv1d weight");
  if (vx.dim(1) != vw.dim(0) || vb.size() != vw.dim(0)) {
    throw std::invalid_argument("depthwise_conv1d: channel mismatch input " +
                                shape_to_string(vx.shape()) + " vs weight " +
                                shape_to_string(vw.shape()));
  }
  const Index batch = vx.dim(0), ch = vx.dim(1), len = vx.dim(2), k = vw.dim(1);
  if (k < 1 || k > len) {
    throw std::invalid_argument("depthwise_conv1d: kernel width " + std::to_string(k) +
                                " out of range for length " + std::to_string(len));
  }
  const Index offset = (k - 1) / 2;

  Tensor out({batch, ch, len});
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < ch; ++c) {
      const double* row = vx.data() + (b * ch + c) * len;
      double* y = out.data() + (b * ch + c) * len;
      for (Index t = 0; t < len; ++t) {
        double acc = vb[c];
        const Index j0 = std::max<Index>(0, offset - t);
        const Index j1 = std::min<Index>(k, len - t + offset);
        for (Index j = j0; j < j1; ++j) acc += vw.at(c, j) * row[t + j - offset];
        y[t] = acc;
      }
    }
  }

  return tape.record(std::move(out), [x, w, bias, batch, ch, len, k, offset](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    Tensor dx(vx.shape()), dw(vw.shape()), db(t.value(bias).shape());
    for (Index b = 0; b < batch; ++b) {
      for (Index c = 0; c < ch; ++c) {
        const double* row = vx.data() + (b * ch + c) * len;
        const double* gr = g.data() + (b * ch + c) * len;
        double* dxr = dx.data() + (b * ch + c) * len;
        for (Index t = 0; t < len; ++t) {
          db[c] += gr[t];
          const Index j0 = std::max<Index>(0, offset - t);
          const Index j1 = std::min<Index>(k, len - t + offset);
          for (Index j = j0; j < j1; ++j) {
            dw.at(c, j) += gr[t] * row[t + j - offset];
            dxr[t + j - offset] += gr[t] * vw.at(c, j);
          }
        }
      }
    }
    t.accumulate(x, dx);
    t.accumulate(w, dw);
    t.accumulate(bias, db);
  });
}

VarId global_max_pool(Tape& tape, VarId x) {
  const Tensor& vx = tape.value(x);
  require_rank(vx, 3, "global_max_pool");
  const Index batch = vx.dim(0), ch = vx.dim(1), len = vx.dim(2);
  Tensor out({batch, ch});
  std::vector<Index> argmax(static_cast<std::size_t>(batch * ch));
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < ch; ++c) {
      const double* row = vx.data() + (b * ch + c) * len;
      Index best = 0;
      for (Index t = 1; t < len; ++t) {
        if (row[t] > row[best]) best = t;  // first maximal index wins ties
      }
      out.at(b, c) = row[best];
      argmax[static_cast<std::size_t>(b * ch + c)] = best;
    }
  }
  return tape.record(std::move(out), [x, batch, ch, len, argmax = std::move(argmax)](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    Tensor dx({batch, ch, len});
    for (Index b = 0; b < batch; ++b) {
      for (Index c = 0; c < ch; ++c) {
        dx.at(b, c, argmax[static_cast<std::size_t>(b * ch + c)]) = g.at(b, c);
      }
    }
    t.accumulate(x, dx);
  });
}

VarId concat_channels(Tape& tape, const std::vector<VarId>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  if (parts.size() == 1) return parts[0];
  const Tensor& first = tape.value(parts[0]);
  const Index rank = first.rank();
  if (rank != 2 && rank != 3) {
    throw std::invalid_argument("concat_channels: expected rank 2 or 3, got " +
                                shape_to_string(first.shape()));
  }
  const Index batch = first.dim(0);
  const Index len = rank == 3 ? first.dim(2) : 1;
  Index total_ch = 0;
  for (VarId p : parts) {
    const Tensor& v = tape.value(p);
    if (v.rank() != rank || v.dim(0) != batch || (rank == 3 && v.dim(2) != len)) {
      throw std::invalid_argument("concat_channels: shape mismatch " +
                                  shape_to_string(first.shape()) + " vs " +
                                  shape_to_string(v.shape()));
    }
    total_ch += v.dim(1);
  }
  Shape out_shape = rank == 3 ? Shape{batch, total_ch, len} : Shape{batch, total_ch};
  Tensor out(out_shape);
  Index ch_off = 0;
  for (VarId p : parts) {
    const Tensor& v = tape.value(p);
    const Index ch = v.dim(1);
    for (Index b = 0; b < batch; ++b) {
      std::copy(v.data() + b * ch * len, v.data() + (b + 1) * ch * len,
                out.data() + (b * total_ch + ch_off) * len);
    }
    ch_off += ch;
  }
  std::vector<VarId> srcs = parts;
  return tape.record(std::move(out), [srcs = std::move(srcs), batch, len, total_ch](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    Index ch_off = 0;
    for (VarId p : srcs) {
      const Tensor& v = t.value(p);
      const Index ch = v.dim(1);
      Tensor dp(v.shape());
      for (Index b = 0; b < batch; ++b) {
        std::copy(g.data() + (b * total_ch + ch_off) * len,
                  g.data() + (b * total_ch + ch_off + ch) * len, dp.data() + b * ch * len);
      }
      t.accumulate(p, dp);
      ch_off += ch;
    }
  });
}

VarId dropout(Tape& tape, VarId x, double p, bool train_mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("dropout: probability " + std::to_string(p) + " outside [0,1)");
  }
  if (!train_mode || p == 0.0) return x;  // identity, no randomness consumed
  const Tensor& vx = tape.value(x);
  const double scale = 1.0 / (1.0 - p);
  Tensor mask(vx.shape());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? 0.0 : scale;
  Tensor out(vx.shape());
  out.array() = vx.array() * mask.array();
  return tape.record(std::move(out), [x, mask = std::move(mask)](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    Tensor dx(g.shape());
    dx.array() = g.array() * mask.array();
    t.accumulate(x, dx);
  });
}

VarId affine(Tape& tape, VarId x, VarId w, VarId bias) {
  const Tensor& vx = tape.value(x);
  const Tensor& vw = tape.value(w);
  const Tensor& vb = tape.value(bias);
  require_rank(vx, 2, "affine input");
  require_rank(vw, 2, "affine weight");
  if (vx.dim(1) != vw.dim(0) || vb.size() != vw.dim(1)) {
    throw std::invalid_argument("affine: shape mismatch input " + shape_to_string(vx.shape()) +
                                " vs weight " + shape_to_string(vw.shape()));
  }
  const Index batch = vx.dim(0), in = vw.dim(0), out_dim = vw.dim(1);
  Tensor out({batch, out_dim});
  out.as_matrix(batch, out_dim).noalias() = vx.as_matrix(batch, in) * vw.as_matrix(in, out_dim);
  out.as_matrix(batch, out_dim).rowwise() +=
      Eigen::Map<const Eigen::RowVectorXd>(vb.data(), out_dim);
  return tape.record(std::move(out), [x, w, bias, batch, in, out_dim](Tape& t, VarId self) {
    const Tensor& g = t.grad(self);
    Tensor dx({batch, in}), dw({in, out_dim}), db(t.value(bias).shape());
    dx.as_matrix(batch, in).noalias() =
        g.as_matrix(batch, out_dim) * t.value(w).as_matrix(in, out_dim).transpose();
    dw.as_matrix(in, out_dim).noalias() =
        t.value(x).as_matrix(batch, in).transpose() * g.as_matrix(batch, out_dim);
    Eigen::Map<Eigen::RowVectorXd>(db.data(), out_dim) =
        g.as_matrix(batch, out_dim).colwise().sum();
    t.accumulate(x, dx);
    t.accumulate(w, dw);
    t.accumulate(bias, db);
  });
}

VarId embedding(Tape& tape, VarId table, const std::vector<std::vector<std::int32_t>>& ids) {
  const Tensor& vt = tape.value(table);
  require_rank(vt, 2, "embedding table");
  const Index vocab = vt.dim(0), edim = vt.dim(1);
  const Index batch = static_cast<Index>(ids.size());
  if (batch == 0) throw std::invalid_argument("embedding: empty batch");
  const Index len = static_cast<Index>(ids.front().size());
  for (const auto& row : ids) {
    if (static_cast<Index>(row.size()) != len) {
      throw std::invalid_argument("embedding: ragged batch (expected length " +
                                  std::to_string(len) + ")");
    }
    for (std::int32_t id : row) {
      if (id < 0 || id >= vocab) {
        throw std::invalid_argument("embedding: token id " + std::to_string(id) +
                                    " outside vocabulary of size " + std::to_string(vocab));
      }
    }
  }
  Tensor out({batch, edim, len});
  for (Index b = 0; b < batch; ++b) {
    for (Index t = 0; t < len; ++t) {
      const Index id = ids[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)];
      for (Index e = 0; e < edim; ++e) out.at(b, e, t) = vt.at(id, e);
    }
  }
  auto ids_copy = ids;
  return tape.record(std::move(out),
                     [table, ids = std::move(ids_copy), batch, edim, len](Tape& t, VarId self) {
                       const Tensor& g = t.grad(self);
                       Tensor dt(t.value(table).shape());
                       for (Index b = 0; b < batch; ++b) {
                         for (Index tt = 0; tt < len; ++tt) {
                           const Index id =
                               ids[static_cast<std::size_t>(b)][static_cast<std::size_t>(tt)];
                           for (Index e = 0; e < edim; ++e) dt.at(id, e) += g.at(b, e, tt);
                         }
                       }
                       t.accumulate(table, dt);
                     });
}

VarId sum_all(Tape& tape, VarId x) {
  const Tensor& vx = tape.value(x);
  Tensor out = Tensor::scalar(vx.array().sum());
  return tape.record(std::move(out), [x](Tape& t, VarId self) {
    const double g = t.grad(self)[0];
    t.accumulate(x, Tensor::full(t.value(x).shape(), g));
  });
}

VarId mean_all(Tape& tape, VarId x) {
  const Tensor& vx = tape.value(x);
  const double inv_n = 1.0 / static_cast<double>(vx.size());
  Tensor out = Tensor::scalar(vx.array().sum() * inv_n);
  return tape.record(std::move(out), [x, inv_n](Tape& t, VarId self) {
    const double g = t.grad(self)[0] * inv_n;
    t.accumulate(x, Tensor::full(t.value(x).shape(), g));
  });
}

VarId weighted_bce_with_logits(Tape& tape, VarId logits, const Eigen::ArrayXd& labels,
                               double pos_weight) {
  if (pos_weight <= 0.0) throw std::invalid_argument("weighted_bce: pos_weight must be positive");
  const Tensor& vz = tape.value(logits);
  const Index batch = vz.dim(0);
  if (vz.size() != batch || labels.size() != batch) {
    if (!(vz.rank() == 2 && vz.dim(1) == 1 && labels.size() == batch)) {
      throw std::invalid_argument("weighted_bce: logits shape " + shape_to_string(vz.shape()) +
                                  " vs " + std::to_string(labels.size()) + " labels");
    }
  }
  if (!vz.all_finite()) throw std::runtime_error("weighted_bce: non-finite logits");

  // loss_i = (1-y) z + (w y + 1 - y) softplus(-z), softplus in stable form.
  double total = 0.0;
  for (Index i = 0; i < batch; ++i) {
    const double z = vz[i];
    const double y = labels[i];
    const double softplus_neg = std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    total += (1.0 - y) * z + (pos_weight * y + 1.0 - y) * softplus_neg;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(batch));
  Eigen::ArrayXd y = labels;
  return tape.record(std::move(out), [logits, y = std::move(y), pos_weight, batch](Tape& t, VarId self) {
    const double g = t.grad(self)[0] / static_cast<double>(batch);
    const Tensor& vz = t.value(logits);
    Tensor dz(vz.shape());
    for (Index i = 0; i < batch; ++i) {
      const double z = vz[i];
      const double sig = 1.0 / (1.0 + std::exp(-z));
      dz[i] = g * ((1.0 - y[i]) - (pos_weight * y[i] + 1.0 - y[i]) * (1.0 - sig));
    }
    t.accumulate(logits, dz);
  });
}

}  // namespace ssmlab
