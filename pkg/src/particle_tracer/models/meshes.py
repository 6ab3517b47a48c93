from typing import Annotated, Literal, Tuple, Union

from pydantic import BaseModel, Field


class MirrorMaterial(BaseModel):
    type: Literal["mirror"] = "mirror"


class RefractMaterial(BaseModel):
    type: Literal["refract"] = "refract"
    ior: float = Field(default=1.5, gt=0.0, description="Index of refraction inside the mesh")


class DiffuseMaterial(BaseModel):
    type: Literal["diffuse"] = "diffuse"
    albedo: Tuple[float, float, float] = (0.8, 0.8, 0.8)


Material = Annotated[Union[MirrorMaterial, RefractMaterial, DiffuseMaterial], Field(discriminator="type")]


class PointLight(BaseModel):
    position: Tuple[float, float, float]
