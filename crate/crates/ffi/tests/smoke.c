#include <math.h>
#include <stdio.h>
#include <string.h>
#include "slipstab.h"

/* Three orthogonal unit squares: stable, no slippable motion. */
int main(void) {
    enum { N = 300 };
    double pos[3 * N], nrm[3 * N];
    for (int i = 0; i < N; ++i) {
        int f = i % 3, j = i / 3;
        double a = (j % 10) / 9.0, b = (j / 10) / 9.0;
        double p[3] = {a, b, 0.0}, n[3] = {0.0, 0.0, 1.0};
        if (f == 1) { p[0] = 0.0; p[1] = a; p[2] = b; n[0] = 1.0; n[2] = 0.0; }
        if (f == 2) { p[0] = b; p[1] = 0.0; p[2] = a; n[1] = 1.0; n[2] = 0.0; }
        memcpy(pos + 3 * i, p, sizeof p);
        memcpy(nrm + 3 * i, n, sizeof n);
    }
    SlipstabCloud *cloud = NULL;
    if (slipstab_cloud_new(pos, nrm, N, &cloud) != SLIPSTAB_STATUS_OK) return 1;
    SlipstabStability st;
    if (slipstab_analyze(cloud, true, &st) != SLIPSTAB_STATUS_OK) return 2;
    if (!st.stable || st.slippable != 0) return 3;
    if (slipstab_analyze(NULL, true, &st) != SLIPSTAB_STATUS_NULL_POINTER) return 4;
    if (slipstab_last_error() == NULL) return 5;
    slipstab_cloud_free(cloud);

    double dims[3] = {1.0, 0.7, 0.4};
    SlipstabTemplate *box = NULL;
    if (slipstab_template_new(SLIPSTAB_PRIMITIVE_BOX, dims, 3, &box) != SLIPSTAB_STATUS_OK) return 6;
    SlipstabPose gt = {{1.0, 0.0, 0.0, 0.0}, {0.0, 0.0, 2.0}};
    SlipstabPose moved = gt;
    moved.t[0] += 0.01;
    double d = -1.0;
    if (slipstab_add(&moved, &gt, box, &d) != SLIPSTAB_STATUS_OK || fabs(d - 0.01) > 1e-12) return 7;
    slipstab_template_free(box);
    printf("c smoke ok %s\n", slipstab_version());
    return 0;
}
