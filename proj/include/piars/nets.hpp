#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "piars/rng.hpp"
#include "piars/tape.hpp"
#include "piars/types.hpp"

namespace piars::nets {

using grad::Tape;
using grad::Tensor;

// Widths of the network stack. The conv/projection/z dimensions default to
// the production architecture; tests instantiate smaller variants.
struct NetSpec {
  int image_h = 24;
  int image_w = 32;
  int channels = 1;  // frame-stack depth (3 for moving platforms)
  int proprio_dim = 26;
  int action_dim = 12;
  int conv_channels = 8;
  int cam_dim = 64;  // per-camera code
  int z_dim = 128;
  int aux_h = 64;      // past/future head hidden width
  int rnn_units = 128;
  int head_h1 = 64;
  int head_h2 = 32;

  bool operator==(const NetSpec&) const = default;
};

struct Conv {
  Tensor w;  // [Co x Ci x 3 x 3]
  Tensor b;  // [Co]
};

struct Linear {
  Tensor w;  // [out x in]
  Tensor b;  // [out]
};

// Two architecturally identical CNNs with independent parameters, one per
// camera. conv(3x3, stride 1) -> relu -> conv -> relu -> 64-d linear -> relu.
struct CameraCnn {
  Conv c1, c2;
  Linear proj;
};

struct VisionEncoderParams {
  CameraCnn front, rear;
};

// phi: vision code concatenated with proprio, linearly projected with tanh.
struct EncoderParams {
  VisionEncoderParams vis;
  Linear proj;
};

struct Mlp2Params {
  Linear l1, l2;
};

// Recurrent reward cell g: 3-layer tanh MLP on (latent, action); a linear
// branch off the second layer emits the reward prediction.
struct RewardRnnParams {
  Linear l1, l2, l3, reward;
};

struct PolicyHeadParams {
  Linear l1, l2, l3;
};

struct EncoderStack {
  NetSpec spec;
  EncoderParams enc;
  Mlp2Params past, future;
  RewardRnnParams rnn;
  PolicyHeadParams policy;
};

EncoderStack make_stack(const NetSpec& spec, Rng& rng);

// ---- untaped inference (pure functions of params and input) ----

std::vector<double> camera_forward(const CameraCnn& cam, const Tensor& img);
std::vector<double> encode_vision(const VisionEncoderParams& p, const Observation& obs);
std::vector<double> encode(const EncoderParams& p, const Observation& obs);
// k reward predictions from z_t and actions a_t..a_{t+k-1}
std::vector<double> rnn_unroll(const RewardRnnParams& p, const std::vector<double>& z,
                               const std::vector<std::vector<double>>& actions);
// tanh outputs in (-1,1)
std::vector<double> policy_raw(const PolicyHeadParams& p, const std::vector<double>& z,
                               const std::vector<double>& proprio);
std::vector<double> rescale_action(const std::vector<double>& raw, const ActionSpec& spec);
std::vector<double> policy_forward(const PolicyHeadParams& p, const std::vector<double>& z,
                                   const std::vector<double>& proprio, const ActionSpec& spec);

// ---- parameter traversal / flattening ----

// Tensors in a fixed, documented order; flatten/unflatten is a bijection.
std::vector<Tensor*> pi_params(EncoderStack& s);           // encoder + aux heads + rnn
std::vector<Tensor*> policy_head_params(EncoderStack& s);  // head only (PI-ARS theta)
std::vector<Tensor*> full_policy_params(EncoderStack& s);  // encoder + head (ARS baseline theta)
std::vector<const Tensor*> policy_head_params(const EncoderStack& s);
std::vector<const Tensor*> full_policy_params(const EncoderStack& s);
void for_each_named_tensor(EncoderStack& s,
                           const std::function<void(const std::string&, Tensor&)>& fn);

std::size_t flat_size(const std::vector<const Tensor*>& params);
std::size_t flat_size(const std::vector<Tensor*>& params);
std::vector<double> flatten(const std::vector<const Tensor*>& params);
std::vector<double> flatten(const std::vector<Tensor*>& params);
void unflatten(const std::vector<double>& flat, const std::vector<Tensor*>& params);

// ---- taped forward (PI training) ----

// Maps parameter tensors to their tape leaves.
struct TapedParams {
  std::unordered_map<const Tensor*, Tape::Id> ids;
  Tape::Id id(const Tensor& t) const;
};

TapedParams register_params(Tape& tape, const std::vector<Tensor*>& params);

Tape::Id taped_camera(Tape& tape, const TapedParams& tp, const CameraCnn& cam, Tape::Id img);
Tape::Id taped_encode_vision(Tape& tape, const TapedParams& tp, const VisionEncoderParams& p,
                             const Observation& obs);
Tape::Id taped_encode(Tape& tape, const TapedParams& tp, const EncoderParams& p,
                      const Observation& obs);
Tape::Id taped_mlp2(Tape& tape, const TapedParams& tp, const Mlp2Params& p, Tape::Id x);
// k reward predictions as a [k] vector node
Tape::Id taped_rnn_unroll(Tape& tape, const TapedParams& tp, const RewardRnnParams& p,
                          Tape::Id z, const std::vector<std::vector<double>>& actions);

}  // namespace piars::nets
