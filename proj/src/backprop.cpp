#include "asw/backprop.hpp"

#include <cmath>

#include "asw/error.hpp"
#include "asw/kernels.hpp"

namespace asw {

SegmentTape forward_segment(const Transformer& model, const Matrix& inputs, KvCache& cache) {
  SegmentTape tape;
  tape.begin = cache.length;
  tape.rows.resize(inputs.rows());
  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    model.forward_row(inputs.row(r), cache, &tape.rows[r]);
  }
  return tape;
}

SegmentGrads backward_segment(const Transformer& model, const KvCache& cache,
                              const SegmentTape& tape, const BackwardRequest& request) {
  const ModelConfig& cfg = model.config();
  const ParamLayout& layout = model.layout();
  const std::size_t e = cfg.dim;
  const std::size_t f = cfg.ffn;
  const std::size_t heads = cfg.heads;
  const std::size_t hd = e / heads;
  const std::size_t rows = tape.rows.size();
  const std::size_t begin = tape.begin;
  const std::size_t end = begin + rows;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* p = model.params().data();
  const bool pg = !request.param_grads.empty();
  double* g = pg ? request.param_grads.data() : nullptr;

  if (request.d_hidden == nullptr || request.d_hidden->rows() != rows || request.d_hidden->cols() != e) {
    throw Error(Errc::shape_error, "d_hidden must be rows x dim");
  }
  if (cache.length < end) {
    throw Error(Errc::shape_error, "cache shorter than the taped segment");
  }

  SegmentGrads out;
  Matrix dx = *request.d_hidden;
  const std::size_t kv_from = request.want_prefix_grads ? 0 : begin;
  if (request.want_prefix_grads) {
    out.d_prefix_keys.resize(cfg.layers);
    out.d_prefix_values.resize(cfg.layers);
  }

  std::vector<double> dact(f), dpre(f), dh(e), datt(e), dp;
  Matrix dq(rows, e);
  Matrix dk(end - kv_from, e);
  Matrix dv(end - kv_from, e);

  for (std::size_t li = cfg.layers; li-- > 0;) {
    const auto& lay = layout.layers[li];
    const double* keys = cache.keys[li].data();
    const double* values = cache.values[li].data();
    std::fill(dq.data().begin(), dq.data().end(), 0.0);
    std::fill(dk.data().begin(), dk.data().end(), 0.0);
    std::fill(dv.data().begin(), dv.data().end(), 0.0);

    for (std::size_t r = 0; r < rows; ++r) {
      const RowTape::Layer& t = tape.rows[r].layers[li];
      const std::size_t i = begin + r;
      auto dxr = dx.row(r);

      // Feed-forward block.
      if (pg) {
        for (std::size_t c = 0; c < e; ++c) {
          g[lay.b2 + c] += dxr[c];
        }
        kernels::outer_acc(t.act, dxr, f, e, g + lay.w2);
      }
      std::fill(dact.begin(), dact.end(), 0.0);
      kernels::vec_mat_t_acc(dxr, p + lay.w2, f, e, dact);
      for (std::size_t k = 0; k < f; ++k) {
        dpre[k] = dact[k] * kernels::gelu_grad(t.pre_act[k]);
      }
      if (pg) {
        for (std::size_t k = 0; k < f; ++k) {
          g[lay.b1 + k] += dpre[k];
        }
        kernels::outer_acc(t.h2, dpre, e, f, g + lay.w1);
      }
      std::fill(dh.begin(), dh.end(), 0.0);
      kernels::vec_mat_t_acc(dpre, p + lay.w1, e, f, dh);
      kernels::layer_norm_backward(dh, t.xhat2, t.rstd2, {p + lay.ln2_gain, e}, dxr,
                                   pg ? g + lay.ln2_gain : nullptr, pg ? g + lay.ln2_bias : nullptr);

      // Attention output projection; dxr now holds d(x_mid).
      if (pg) {
        kernels::outer_acc(t.att, dxr, e, e, g + lay.wo);
      }
      std::fill(datt.begin(), datt.end(), 0.0);
      kernels::vec_mat_t_acc(dxr, p + lay.wo, e, e, datt);

      dp.resize(i + 1);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * hd;
        const double* probs = t.probs.data() + h * (i + 1);
        double weighted = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = values + j * e + c0;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) {
            s += datt[c0 + c] * vj[c];
          }
          dp[j] = s;
          weighted += probs[j] * s;
        }
        auto dqr = dq.row(r);
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = probs[j] * (dp[j] - weighted) * scale;
          const double* kj = keys + j * e + c0;
          for (std::size_t c = 0; c < hd; ++c) {
            dqr[c0 + c] += ds * kj[c];
          }
          if (j >= kv_from) {
            auto dkj = dk.row(j - kv_from);
            auto dvj = dv.row(j - kv_from);
            for (std::size_t c = 0; c < hd; ++c) {
              dkj[c0 + c] += ds * t.q[c0 + c];
              dvj[c0 + c] += probs[j] * datt[c0 + c];
            }
          }
        }
      }
    }

    if (request.ext_d_keys != nullptr) {
      const Matrix& ek = (*request.ext_d_keys)[li];
      const Matrix& ev = (*request.ext_d_values)[li];
      for (std::size_t r = 0; r < rows; ++r) {
        auto dkr = dk.row(begin + r - kv_from);
        auto dvr = dv.row(begin + r - kv_from);
        for (std::size_t c = 0; c < e; ++c) {
          dkr[c] += ek(r, c);
          dvr[c] += ev(r, c);
        }
      }
    }

    for (std::size_t r = 0; r < rows; ++r) {
      const RowTape::Layer& t = tape.rows[r].layers[li];
      const auto dqr = dq.row(r);
      const auto dkr = dk.row(begin + r - kv_from);
      const auto dvr = dv.row(begin + r - kv_from);
      std::fill(dh.begin(), dh.end(), 0.0);
      kernels::vec_mat_t_acc(dqr, p + lay.wq, e, e, dh);
      kernels::vec_mat_t_acc(dkr, p + lay.wk, e, e, dh);
      kernels::vec_mat_t_acc(dvr, p + lay.wv, e, e, dh);
      if (pg) {
        kernels::outer_acc(t.h1, dqr, e, e, g + lay.wq);
        kernels::outer_acc(t.h1, dkr, e, e, g + lay.wk);
        kernels::outer_acc(t.h1, dvr, e, e, g + lay.wv);
      }
      kernels::layer_norm_backward(dh, t.xhat1, t.rstd1, {p + lay.ln1_gain, e}, dx.row(r),
                                   pg ? g + lay.ln1_gain : nullptr, pg ? g + lay.ln1_bias : nullptr);
    }

    if (request.want_prefix_grads) {
      Matrix pk(begin, e), pv(begin, e);
      for (std::size_t j = 0; j < begin; ++j) {
        std::copy(dk.row(j).begin(), dk.row(j).end(), pk.row(j).begin());
        std::copy(dv.row(j).begin(), dv.row(j).end(), pv.row(j).begin());
      }
      out.d_prefix_keys[li] = std::move(pk);
      out.d_prefix_values[li] = std::move(pv);
    }
  }

  out.d_input = std::move(dx);
  return out;
}

void head_backward(const Transformer& model, std::span<const double> hidden,
                   std::span<const double> d_logits, std::span<double> d_hidden,
                   std::span<double> param_grads) {
  const ModelConfig& cfg = model.config();
  const ParamLayout& layout = model.layout();
  const std::size_t e = cfg.dim;
  const double* p = model.params().data();
  std::vector<double> xhat(e), h(e), dh(e, 0.0);
  const double rstd =
      kernels::layer_norm(hidden, {p + layout.lnf_gain, e}, {p + layout.lnf_bias, e}, xhat, h);
  kernels::vec_mat_t_acc(d_logits, p + layout.w_out, e, cfg.vocab, dh);
  double* g = param_grads.empty() ? nullptr : param_grads.data();
  if (g != nullptr) {
    kernels::outer_acc(h, d_logits, e, cfg.vocab, g + layout.w_out);
    for (std::size_t v = 0; v < cfg.vocab; ++v) {
      g[layout.b_out + v] += d_logits[v];
    }
  }
  kernels::layer_norm_backward(dh, xhat, rstd, {p + layout.lnf_gain, e}, d_hidden,
                               g != nullptr ? g + layout.lnf_gain : nullptr,
                               g != nullptr ? g + layout.lnf_bias : nullptr);
}

}  // namespace asw
