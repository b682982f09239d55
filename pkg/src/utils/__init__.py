"""
工具函数模块

包含各种辅助工具函数。
"""

from .helpers import setup_logging, ensure_directories

__all__ = ['setup_logging', 'ensure_directories'] 