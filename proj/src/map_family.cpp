#include "otflow/map_family.hpp"

namespace otflow {

LinearFeatureMap affine_line_map() {
    return LinearFeatureMap(1, 2, [](const Vec& x) {
        Mat B(1, 2);
        B << x[0], 1.0;
        return B;
    });
}

}  // namespace otflow
