from typing import List
from pydantic import BaseModel, ConfigDict, Field, model_validator


class SceneConfig(BaseModel):
    """Factory geometry and InF-DH channel constants"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    width_m: float = Field(60.0, gt=0, description="Scene extent along x")
    length_m: float = Field(120.0, gt=0, description="Scene extent along y")
    height_m: float = Field(10.0, gt=0, description="Hall height")
    bs_spacing_m: float = Field(20.0, gt=0, description="Inter-BS spacing of the grid")
    bs_height_m: float = Field(8.0, gt=0, description="BS antenna height")
    ue_height_m: float = Field(1.5, gt=0, description="UE antenna height")
    carrier_ghz: float = Field(3.5, gt=0, description="Carrier frequency in GHz")
    clutter_density: float = Field(0.6, gt=0, lt=1, description="Clutter density r")
    clutter_height_m: float = Field(6.0, gt=0, description="Clutter height h_c")
    clutter_size_m: float = Field(2.0, gt=0, description="Clutter size d_clutter")
    shadow_corr_dist_m: float = Field(10.0, gt=0, description="Shadow fading correlation distance")
    los_corr_dist_m: float = Field(10.0, gt=0, description="LOS state correlation distance")
    sigma_sf_los_db: float = Field(4.0, ge=0, description="Shadow fading std for LOS links")
    sigma_sf_nlos_db: float = Field(7.2, ge=0, description="Shadow fading std for NLOS links")
    field_grid_step_m: float = Field(2.0, gt=0, description="Node spacing of the correlated field grid")

    @model_validator(mode="after")
    def validate_heights(self) -> "SceneConfig":
        if not self.ue_height_m < self.clutter_height_m < self.bs_height_m:
            raise ValueError("heights must satisfy ue_height_m < clutter_height_m < bs_height_m")
        if self.bs_height_m > self.height_m:
            raise ValueError("bs_height_m must not exceed height_m")
        if self.bs_spacing_m > min(self.width_m, self.length_m):
            raise ValueError("bs_spacing_m must fit inside the scene")
        return self

    def bs_axis(self, extent_m: float) -> List[float]:
        """Grid coordinates along one axis: half a spacing from the wall, then every spacing."""
        coords = []
        coord = self.bs_spacing_m / 2.0
        while coord < extent_m:
            coords.append(coord)
            coord += self.bs_spacing_m
        return coords

    @property
    def n_bs(self) -> int:
        return len(self.bs_axis(self.width_m)) * len(self.bs_axis(self.length_m))
