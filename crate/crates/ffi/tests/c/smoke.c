#include <stdio.h>
#include <string.h>
#include "eit_ias.h"

int main(void) {
    EitMesh *mesh = NULL;
    if (eit_mesh_generate(0.3, &mesh) != EIT_STATUS_OK) return 10;
    double z[32];
    for (int i = 0; i < 32; i++) z[i] = 1e-6;
    EitForward *fwd = NULL;
    if (eit_forward_new(mesh, 0.79, z, 32, 24, 1.0, &fwd) != EIT_STATUS_OK) return 11;
    size_t m = 0, n = 0;
    eit_forward_sizes(fwd, &m, &n);
    if (m != 44 * 24) return 12;
    double xi[4096] = {0}, data[4096];
    if (n > 4096 || eit_forward_eval(fwd, xi, n, data, m) != EIT_STATUS_OK) return 13;
    if (eit_forward_eval(fwd, xi, n + 1, data, m) != EIT_STATUS_LENGTH) return 14;
    if (strlen(eit_last_error()) == 0) return 15;
    EitSchedule s = eit_schedule_default();
    if (s.k_max1 != 5 || s.inner_linearizations != 2) return 16;
    eit_forward_free(fwd);
    eit_mesh_free(mesh);
    printf("ok\n");
    return 0;
}
