# src/api/dataset_api.py
import shutil
import tarfile
from pathlib import Path

import requests

from src import config
from src.data.cifar import SPLITS
from src.utils.logging import log_debug

ARCHIVE_NAME = "cifar-100-binary.tar.gz"
EXTRACTED_DIR = "cifar-100-binary"


class Cifar100Source:
    def __init__(self, data_dir=None, url=None, timeout=None):
        self.data_dir = Path(data_dir or config.DATA_DIR)
        self.url = url or config.CIFAR100_URL
        self.timeout = timeout or config.DOWNLOAD_TIMEOUT

    @property
    def directory(self):
        return self.data_dir / EXTRACTED_DIR

    def status(self):
        """Return a dict saying which split files are present."""
        present = {split: (self.directory / f"{split}.bin").exists() for split in SPLITS}
        return {
            "directory": str(self.directory),
            **present,
            "all_present": all(present.values()),
        }

    def fetch(self, force=False):
        """Download and unpack the binary release; returns (directory, error)."""
        if self.status()["all_present"] and not force:
            log_debug(f"CIFAR-100 already present in {self.directory}")
            return self.directory, None

        self.data_dir.mkdir(parents=True, exist_ok=True)
        archive = self.data_dir / ARCHIVE_NAME
        try:
            log_debug(f"Downloading {self.url}")
            with requests.get(self.url, stream=True, timeout=self.timeout) as response:
                if response.status_code != 200:
                    return None, f"Download failed: HTTP {response.status_code}"
                with open(archive, "wb") as f:
                    for chunk in response.iter_content(chunk_size=1 << 20):
                        f.write(chunk)
        except requests.RequestException as e:
            return None, f"Download error: {str(e)}"

        try:
            self._extract(archive)
        except (tarfile.TarError, OSError, ValueError) as e:
            return None, f"Could not unpack {archive.name}: {str(e)}"

        if not self.status()["all_present"]:
            return None, f"Archive did not contain {', '.join(f'{s}.bin' for s in SPLITS)}"
        return self.directory, None

    def _extract(self, archive):
        root = self.data_dir.resolve()
        with tarfile.open(archive, "r:gz") as tar:
            for member in tar.getmembers():
                target = (root / member.name).resolve()
                if root != target and root not in target.parents:
                    raise ValueError(f"member {member.name} escapes {root}")
                if not (member.isfile() or member.isdir()):
                    raise ValueError(f"member {member.name} is not a regular file")
            if self.directory.exists():
                shutil.rmtree(self.directory)
            tar.extractall(root)
        log_debug(f"Unpacked {archive.name} into {root}")
