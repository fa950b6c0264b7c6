#pragma once

#include "archoscope/arch.hpp"
#include "archoscope/events.hpp"

namespace archoscope {

// Walk the CMSIS-style loop structure of one layer and emit its event
// tree. Trees come back laid out from t = 0; emulate_inference re-bases
// the layer trees onto a common timeline with inter-layer gaps.
EventNode emulate_conv(const ConvSpec &spec, const TensorShape &in_shape, const CostModel &cost);
EventNode emulate_maxpool(const MaxPoolSpec &spec, const TensorShape &in_shape,
                          const CostModel &cost);
EventNode emulate_dense(const DenseSpec &spec, std::int64_t in_len, const CostModel &cost);
EventNode emulate_activation(const ActivationSpec &spec, std::int64_t n_elems,
                             const CostModel &cost);

EventNode emulate_inference(const Architecture &arch, const CostModel &cost);

} // namespace archoscope
