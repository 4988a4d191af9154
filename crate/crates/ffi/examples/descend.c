/* Minimizes Himmelblau's function through the C API.
 *
 *   cargo build -p pullback-optim-ffi --release
 *   cc -Icrates/ffi/include crates/ffi/examples/descend.c \
 *      target/release/libpullback_optim_ffi.a -lm -lpthread -ldl -o descend
 */
#include <stdio.h>

#include "pullback_optim.h"

int main(void) {
    PoHyperParams h;
    po_hyper_for_dimension(2, &h);
    h.eta = 0.01;
    h.xi = 1e-3;

    PoOptimizer *opt = NULL;
    if (po_optimizer_new("im-sgd", &h, 2, &opt) != PO_OK) {
        fprintf(stderr, "%s\n", po_last_error_message());
        return 1;
    }

    double theta[2] = {0.0, 0.0};
    double grad[2], loss = 0.0;
    for (int i = 0; i < 1000; i++) {
        po_landscape_eval("himmelblau", theta, 2, &loss);
        if (loss < 1e-10) {
            break;
        }
        po_landscape_grad("himmelblau", theta, 2, grad);
        if (po_optimizer_step(opt, theta, grad, 2, loss, NULL) != PO_OK) {
            fprintf(stderr, "%s\n", po_last_error_message());
            po_optimizer_free(opt);
            return 2;
        }
    }
    printf("theta = (%.6f, %.6f), loss = %.3e\n", theta[0], theta[1], loss);
    po_optimizer_free(opt);
    return 0;
}
