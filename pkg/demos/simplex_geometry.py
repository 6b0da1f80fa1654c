# %% [markdown]
# # Compositions and ilr coordinates
#
# A composition only carries relative information, so distances between
# compositions are measured in Aitchison geometry.  The ilr map turns that
# geometry into ordinary Euclidean space, where the regression model lives.

# %%
import numpy as np

from compostar.simplex import aitchison_dist, build_basis, closure, ilr, ilr_inv, perturb, power

x = closure([0.2, 0.3, 0.5])
y = closure([0.4, 0.4, 0.2])
print("x =", x, " y =", y)

# %% [markdown]
# Perturbation and powering play the roles of addition and scaling.

# %%
print("x + y    =", perturb(x, y))
print("2 * x    =", power(2.0, x))
print("d_A(x,y) =", aitchison_dist(x, y))

# %% [markdown]
# Every orthonormal basis gives different coordinates but the same distances.

# %%
for mode in ("helmert", "balance", "pivot"):
    b = build_basis(3, mode)
    zx, zy = ilr(x, b), ilr(y, b)
    print(f"{mode:8s} ilr(x) = {np.round(zx, 4)}  |ilr(x) - ilr(y)| = {np.linalg.norm(zx - zy):.6f}")

# %% [markdown]
# The map is invertible, so results computed in coordinates can be read back
# as shares.

# %%
b = build_basis(3, "balance")
print("round trip:", ilr_inv(ilr(x, b), b))
