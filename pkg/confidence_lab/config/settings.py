"""
Environment Settings
Logging knobs read from the environment or a local .env file.
No environment variable changes what the pipeline computes or writes.
"""

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
load_dotenv()


class LabSettings(BaseSettings):
    """Process-level settings (CWL_LOG_LEVEL, CWL_LOG_JSON)"""
    model_config = SettingsConfigDict(env_prefix="CWL_", env_file=".env", case_sensitive=False, extra="ignore")

    log_level: str = "INFO"
    log_json: bool = False


def get_settings() -> LabSettings:
    return LabSettings()
