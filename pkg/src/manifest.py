"""
Manifest of the artifacts written into one report directory
"""
import hashlib
import json
import logging
import threading
from pathlib import Path
from typing import Dict, List, Optional

from .errors import ArtifactConflict


logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = "1.0"


class ArtifactManifest:
    """Track report artifacts under a config hash"""

    def __init__(self, report_dir: str, config_hash: str):
        """
        Initialize manifest

        Args:
            report_dir: Directory holding the report artifacts
            config_hash: Hash of the config that owns the directory

        Raises:
            ArtifactConflict: the directory already belongs to another config hash
        """
        self.report_dir = Path(report_dir)
        self.manifest_path = self.report_dir / MANIFEST_NAME
        self.config_hash = config_hash
        self._lock = threading.Lock()
        self.data = self._load()

    def _load(self) -> Dict:
        """Load manifest from file"""
        if not self.manifest_path.exists():
            return self._create_empty()
        try:
            with open(self.manifest_path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Failed to load manifest {self.manifest_path}: {e}")
            return self._create_empty()

        owner = data.get("metadata", {}).get("config_hash")
        if owner != self.config_hash:
            raise ArtifactConflict(
                f"{self.report_dir} belongs to config hash {owner}, refusing to write {self.config_hash}"
            )
        return data

    def _create_empty(self) -> Dict:
        """Create empty manifest structure"""
        return {
            "metadata": {
                "config_hash": self.config_hash,
                "version": MANIFEST_VERSION,
            },
            "artifacts": {},
        }

    def record(self, name: str, kind: str, rows: Optional[int] = None, producer: Optional[str] = None):
        """
        Register an artifact already written into the report directory

        Args:
            name: File name relative to the report directory
            kind: csv, parquet, json or txt
            rows: Row count for tables
            producer: Operation that produced the content
        """
        path = self.report_dir / name
        digest = hashlib.md5(path.read_bytes()).hexdigest() if path.exists() else None
        with self._lock:
            entry = {"kind": kind, "md5": digest}
            if rows is not None:
                entry["rows"] = int(rows)
            if producer:
                entry["producer"] = producer
            self.data["artifacts"][name] = entry

    def artifacts(self) -> List[str]:
        with self._lock:
            return sorted(self.data["artifacts"])

    def get_artifact_info(self, name: str) -> Optional[Dict]:
        return self.data["artifacts"].get(name)

    def save(self):
        """Save manifest to file"""
        with self._lock:
            self.report_dir.mkdir(parents=True, exist_ok=True)
            with open(self.manifest_path, "w", encoding="utf-8", newline="\n") as f:
                json.dump(self.data, f, indent=2, sort_keys=True, ensure_ascii=False)
                f.write("\n")
            logger.debug(f"Manifest saved to {self.manifest_path}")

    def get_summary(self) -> Dict:
        """Get summary statistics"""
        with self._lock:
            kinds: Dict[str, int] = {}
            for info in self.data["artifacts"].values():
                kinds[info["kind"]] = kinds.get(info["kind"], 0) + 1
            return {
                "config_hash": self.config_hash,
                "total_artifacts": len(self.data["artifacts"]),
                "by_kind": kinds,
            }
