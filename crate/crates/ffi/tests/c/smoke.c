#include <math.h>
#include <stdio.h>
#include <string.h>

#include "lsr.h"

#define CHECK(cond)                                                   \
    do {                                                              \
        if (!(cond)) {                                                \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__,   \
                    #cond, lsr_last_error_message());                 \
            return 1;                                                 \
        }                                                             \
    } while (0)

static double lcg(unsigned long long *s) {
    *s = *s * 6364136223846793005ULL + 1442695040888963407ULL;
    return (double)(*s >> 11) / 9007199254740992.0;
}

int main(void) {
    unsigned long long seed = 7;
    double x[60];
    uint32_t y[60];
    LsrProblem *p = lsr_problem_new(2, 1);
    CHECK(p != NULL);
    for (int j = 0; j < 3; j++) {
        for (int i = 0; i < 60; i++) {
            y[i] = i < 36 ? 1 : 2;
            x[i] = (y[i] == 1 ? 0.0 : 4.0) + lcg(&seed) - 0.5;
        }
        CHECK(lsr_problem_add_source(p, x, y, 60) == LSR_STATUS_OK);
    }
    CHECK(lsr_problem_set_target(p, x, 60) == LSR_STATUS_OK);

    LsrOptions opts = lsr_options_default();
    opts.estimator = LSR_ESTIMATOR_AVERAGE;
    LsrEstimate *est = NULL;
    CHECK(lsr_estimate(p, &opts, &est) == LSR_STATUS_OK);
    double q[2];
    CHECK(lsr_estimate_q_hat(est, q, 2) == LSR_STATUS_OK);
    CHECK(fabs(q[0] + q[1] - 1.0) < 1e-12);
    CHECK(fabs(q[0] - 0.6) < 0.05);
    lsr_estimate_free(est);

    opts.estimator = 42;
    CHECK(lsr_estimate(p, &opts, &est) == LSR_STATUS_INVALID_ARGUMENT);
    CHECK(strlen(lsr_last_error_message()) > 0);
    lsr_problem_free(p);

    double v[3] = {0.5, 0.7, -0.2}, out[3];
    CHECK(lsr_project_simplex(v, 3, out) == LSR_STATUS_OK);
    CHECK(fabs(out[0] - 0.4) < 1e-12);
    printf("ok\n");
    return 0;
}
