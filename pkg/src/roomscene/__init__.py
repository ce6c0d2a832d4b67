"""Single-view indoor scene geometry: camera calibration from vanishing
points, room layout, support inference, metrology, model retrieval and
silhouette-driven object placement."""
from .errors import RoomSceneError
from .geom import CameraModel, TriMesh
from .pipeline import Config, run_pipeline
from .scene_io import SceneBundle, SceneResult, export_obj, load_bundle, save_bundle

__all__ = ["CameraModel", "Config", "RoomSceneError", "SceneBundle", "SceneResult", "TriMesh",
           "export_obj", "load_bundle", "run_pipeline", "save_bundle"]
__version__ = "0.1.0"
