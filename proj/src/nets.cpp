#include "piars/nets.hpp"

#include <cmath>

#include "piars/kernels.hpp"

namespace piars::nets {

namespace {

Tensor glorot(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& e : t.v) e = rng.uniform(-bound, bound);
  return t;
}

Conv make_conv(int co, int ci, Rng& rng) {
  return Conv{glorot({co, ci, 3, 3}, ci * 9, co * 9, rng), Tensor({co})};
}

Linear make_linear(int out, int in, Rng& rng) {
  return Linear{glorot({out, in}, in, out, rng), Tensor({out})};
}

CameraCnn make_camera(const NetSpec& s, Rng& rng) {
  CameraCnn cam;
  cam.c1 = make_conv(s.conv_channels, s.channels, rng);
  cam.c2 = make_conv(s.conv_channels, s.conv_channels, rng);
  cam.proj = make_linear(s.cam_dim, s.conv_channels * s.image_h * s.image_w, rng);
  return cam;
}

void relu_inplace(std::vector<double>& x) {
  for (double& e : x)
    if (e < 0.0) e = 0.0;
}

std::vector<double> linear_fwd(const Linear& l, const std::vector<double>& x) {
  grad::require(l.w.shape[1] == static_cast<int>(x.size()),
                "linear: input width " + std::to_string(x.size()) + " does not match " +
                    grad::shape_str(l.w.shape));
  std::vector<double> y(l.w.shape[0]);
  grad::kernels::affine(l.w, l.b, x.data(), y.data());
  return y;
}

void tanh_inplace(std::vector<double>& x) {
  for (double& e : x) e = std::tanh(e);
}

}  // namespace

EncoderStack make_stack(const NetSpec& spec, Rng& rng) {
  EncoderStack s;
  s.spec = spec;
  s.enc.vis.front = make_camera(spec, rng);
  s.enc.vis.rear = make_camera(spec, rng);
  s.enc.proj = make_linear(spec.z_dim, 2 * spec.cam_dim + spec.proprio_dim, rng);
  s.past.l1 = make_linear(spec.aux_h, spec.z_dim, rng);
  s.past.l2 = make_linear(spec.z_dim, spec.aux_h, rng);
  s.future.l1 = make_linear(spec.aux_h, 2 * spec.cam_dim, rng);
  s.future.l2 = make_linear(spec.z_dim, spec.aux_h, rng);
  s.rnn.l1 = make_linear(spec.rnn_units, spec.z_dim + spec.action_dim, rng);
  s.rnn.l2 = make_linear(spec.rnn_units, spec.rnn_units, rng);
  s.rnn.l3 = make_linear(spec.z_dim, spec.rnn_units, rng);
  s.rnn.reward = make_linear(1, spec.rnn_units, rng);
  s.policy.l1 = make_linear(spec.head_h1, spec.z_dim + spec.proprio_dim, rng);
  s.policy.l2 = make_linear(spec.head_h2, spec.head_h1, rng);
  s.policy.l3 = make_linear(spec.action_dim, spec.head_h2, rng);
  return s;
}

std::vector<double> camera_forward(const CameraCnn& cam, const Tensor& img) {
  Tensor a, b;
  grad::kernels::conv2d(img, cam.c1.w, cam.c1.b, a);
  for (double& e : a.v)
    if (e < 0.0) e = 0.0;
  grad::kernels::conv2d(a, cam.c2.w, cam.c2.b, b);
  for (double& e : b.v)
    if (e < 0.0) e = 0.0;
  std::vector<double> code(cam.proj.w.shape[0]);
  grad::require(cam.proj.w.shape[1] == static_cast<int>(b.numel()),
                "camera projection width does not match conv output");
  grad::kernels::affine(cam.proj.w, cam.proj.b, b.v.data(), code.data());
  relu_inplace(code);
  return code;
}

std::vector<double> encode_vision(const VisionEncoderParams& p, const Observation& obs) {
  std::vector<double> zf = camera_forward(p.front, obs.front);
  std::vector<double> zr = camera_forward(p.rear, obs.rear);
  zf.insert(zf.end(), zr.begin(), zr.end());
  return zf;
}

std::vector<double> encode(const EncoderParams& p, const Observation& obs) {
  std::vector<double> zv = encode_vision(p.vis, obs);
  zv.insert(zv.end(), obs.proprio.begin(), obs.proprio.end());
  std::vector<double> z = linear_fwd(p.proj, zv);
  tanh_inplace(z);
  return z;
}

std::vector<double> rnn_unroll(const RewardRnnParams& p, const std::vector<double>& z,
                               const std::vector<std::vector<double>>& actions) {
  grad::require(!actions.empty(), "rnn_unroll: action sequence must be nonempty");
  std::vector<double> latent = z;
  std::vector<double> rewards;
  rewards.reserve(actions.size());
  for (const auto& a : actions) {
    std::vector<double> in = latent;
    in.insert(in.end(), a.begin(), a.end());
    std::vector<double> h1 = linear_fwd(p.l1, in);
    tanh_inplace(h1);
    std::vector<double> h2 = linear_fwd(p.l2, h1);
    tanh_inplace(h2);
    rewards.push_back(linear_fwd(p.reward, h2)[0]);
    std::vector<double> h3 = linear_fwd(p.l3, h2);
    tanh_inplace(h3);
    latent = std::move(h3);
  }
  return rewards;
}

std::vector<double> policy_raw(const PolicyHeadParams& p, const std::vector<double>& z,
                               const std::vector<double>& proprio) {
  std::vector<double> in = z;
  in.insert(in.end(), proprio.begin(), proprio.end());
  std::vector<double> h1 = linear_fwd(p.l1, in);
  tanh_inplace(h1);
  std::vector<double> h2 = linear_fwd(p.l2, h1);
  tanh_inplace(h2);
  std::vector<double> out = linear_fwd(p.l3, h2);
  tanh_inplace(out);
  return out;
}

std::vector<double> rescale_action(const std::vector<double>& raw, const ActionSpec& spec) {
  grad::require(static_cast<int>(raw.size()) == spec.size(),
                "rescale_action: dimension mismatch");
  std::vector<double> a(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& d = spec.dims[i];
    a[i] = d.lower + (raw[i] + 1.0) * 0.5 * (d.upper - d.lower);
  }
  return a;
}

std::vector<double> policy_forward(const PolicyHeadParams& p, const std::vector<double>& z,
                                   const std::vector<double>& proprio, const ActionSpec& spec) {
  return rescale_action(policy_raw(p, z, proprio), spec);
}

namespace {

void collect_camera(CameraCnn& c, std::vector<Tensor*>& out) {
  out.push_back(&c.c1.w);
  out.push_back(&c.c1.b);
  out.push_back(&c.c2.w);
  out.push_back(&c.c2.b);
  out.push_back(&c.proj.w);
  out.push_back(&c.proj.b);
}

void collect_linear(Linear& l, std::vector<Tensor*>& out) {
  out.push_back(&l.w);
  out.push_back(&l.b);
}

std::vector<Tensor*> encoder_params(EncoderStack& s) {
  std::vector<Tensor*> out;
  collect_camera(s.enc.vis.front, out);
  collect_camera(s.enc.vis.rear, out);
  collect_linear(s.enc.proj, out);
  return out;
}

}  // namespace

std::vector<Tensor*> pi_params(EncoderStack& s) {
  std::vector<Tensor*> out = encoder_params(s);
  collect_linear(s.past.l1, out);
  collect_linear(s.past.l2, out);
  collect_linear(s.future.l1, out);
  collect_linear(s.future.l2, out);
  collect_linear(s.rnn.l1, out);
  collect_linear(s.rnn.l2, out);
  collect_linear(s.rnn.l3, out);
  collect_linear(s.rnn.reward, out);
  return out;
}

std::vector<Tensor*> policy_head_params(EncoderStack& s) {
  std::vector<Tensor*> out;
  collect_linear(s.policy.l1, out);
  collect_linear(s.policy.l2, out);
  collect_linear(s.policy.l3, out);
  return out;
}

std::vector<Tensor*> full_policy_params(EncoderStack& s) {
  std::vector<Tensor*> out = encoder_params(s);
  collect_linear(s.policy.l1, out);
  collect_linear(s.policy.l2, out);
  collect_linear(s.policy.l3, out);
  return out;
}

std::vector<const Tensor*> policy_head_params(const EncoderStack& s) {
  auto v = policy_head_params(const_cast<EncoderStack&>(s));
  return {v.begin(), v.end()};
}

std::vector<const Tensor*> full_policy_params(const EncoderStack& s) {
  auto v = full_policy_params(const_cast<EncoderStack&>(s));
  return {v.begin(), v.end()};
}

void for_each_named_tensor(EncoderStack& s,
                           const std::function<void(const std::string&, Tensor&)>& fn) {
  const char* cam_names[] = {"c1.w", "c1.b", "c2.w", "c2.b", "proj.w", "proj.b"};
  std::vector<Tensor*> front, rear;
  collect_camera(s.enc.vis.front, front);
  collect_camera(s.enc.vis.rear, rear);
  for (int i = 0; i < 6; ++i) fn(std::string("enc.front.") + cam_names[i], *front[i]);
  for (int i = 0; i < 6; ++i) fn(std::string("enc.rear.") + cam_names[i], *rear[i]);
  fn("enc.proj.w", s.enc.proj.w);
  fn("enc.proj.b", s.enc.proj.b);
  auto lin = [&](const std::string& name, Linear& l) {
    fn(name + ".w", l.w);
    fn(name + ".b", l.b);
  };
  lin("past.l1", s.past.l1);
  lin("past.l2", s.past.l2);
  lin("future.l1", s.future.l1);
  lin("future.l2", s.future.l2);
  lin("rnn.l1", s.rnn.l1);
  lin("rnn.l2", s.rnn.l2);
  lin("rnn.l3", s.rnn.l3);
  lin("rnn.reward", s.rnn.reward);
  lin("policy.l1", s.policy.l1);
  lin("policy.l2", s.policy.l2);
  lin("policy.l3", s.policy.l3);
}

std::size_t flat_size(const std::vector<const Tensor*>& params) {
  std::size_t n = 0;
  for (const Tensor* p : params) n += p->numel();
  return n;
}

std::size_t flat_size(const std::vector<Tensor*>& params) {
  std::size_t n = 0;
  for (const Tensor* p : params) n += p->numel();
  return n;
}

std::vector<double> flatten(const std::vector<const Tensor*>& params) {
  std::vector<double> flat;
  flat.reserve(flat_size(params));
  for (const Tensor* p : params) flat.insert(flat.end(), p->v.begin(), p->v.end());
  return flat;
}

std::vector<double> flatten(const std::vector<Tensor*>& params) {
  return flatten(std::vector<const Tensor*>(params.begin(), params.end()));
}

void unflatten(const std::vector<double>& flat, const std::vector<Tensor*>& params) {
  grad::require(flat.size() == flat_size(std::vector<const Tensor*>(params.begin(), params.end())),
                "unflatten: flat vector length does not match parameter count");
  std::size_t off = 0;
  for (Tensor* p : params) {
    std::copy(flat.begin() + off, flat.begin() + off + p->numel(), p->v.begin());
    off += p->numel();
  }
}

Tape::Id TapedParams::id(const Tensor& t) const {
  auto it = ids.find(&t);
  grad::require(it != ids.end(), "taped forward references an unregistered parameter");
  return it->second;
}

TapedParams register_params(Tape& tape, const std::vector<Tensor*>& params) {
  TapedParams tp;
  for (Tensor* p : params) tp.ids.emplace(p, tape.leaf(*p));
  return tp;
}

Tape::Id taped_camera(Tape& tape, const TapedParams& tp, const CameraCnn& cam, Tape::Id img) {
  Tape::Id a = tape.relu(tape.conv2d(img, tp.id(cam.c1.w), tp.id(cam.c1.b)));
  Tape::Id b = tape.relu(tape.conv2d(a, tp.id(cam.c2.w), tp.id(cam.c2.b)));
  Tape::Id flat = tape.reshape(b, {static_cast<int>(tape.val(b).numel())});
  return tape.relu(tape.affine(tp.id(cam.proj.w), tp.id(cam.proj.b), flat));
}

Tape::Id taped_encode_vision(Tape& tape, const TapedParams& tp, const VisionEncoderParams& p,
                             const Observation& obs) {
  Tape::Id zf = taped_camera(tape, tp, p.front, tape.constant(obs.front));
  Tape::Id zr = taped_camera(tape, tp, p.rear, tape.constant(obs.rear));
  return tape.concat({zf, zr});
}

Tape::Id taped_encode(Tape& tape, const TapedParams& tp, const EncoderParams& p,
                      const Observation& obs) {
  Tape::Id zv = taped_encode_vision(tape, tp, p.vis, obs);
  Tape::Id in = tape.concat({zv, tape.constant(Tensor::vec(obs.proprio))});
  return tape.tanh(tape.affine(tp.id(p.proj.w), tp.id(p.proj.b), in));
}

Tape::Id taped_mlp2(Tape& tape, const TapedParams& tp, const Mlp2Params& p, Tape::Id x) {
  Tape::Id h = tape.relu(tape.affine(tp.id(p.l1.w), tp.id(p.l1.b), x));
  return tape.affine(tp.id(p.l2.w), tp.id(p.l2.b), h);
}

Tape::Id taped_rnn_unroll(Tape& tape, const TapedParams& tp, const RewardRnnParams& p,
                          Tape::Id z, const std::vector<std::vector<double>>& actions) {
  grad::require(!actions.empty(), "taped_rnn_unroll: action sequence must be nonempty");
  Tape::Id latent = z;
  std::vector<Tape::Id> rewards;
  for (const auto& a : actions) {
    Tape::Id in = tape.concat({latent, tape.constant(Tensor::vec(a))});
    Tape::Id h1 = tape.tanh(tape.affine(tp.id(p.l1.w), tp.id(p.l1.b), in));
    Tape::Id h2 = tape.tanh(tape.affine(tp.id(p.l2.w), tp.id(p.l2.b), h1));
    rewards.push_back(tape.affine(tp.id(p.reward.w), tp.id(p.reward.b), h2));
    latent = tape.tanh(tape.affine(tp.id(p.l3.w), tp.id(p.l3.b), h2));
  }
  return tape.concat(rewards);
}

}  // namespace piars::nets
