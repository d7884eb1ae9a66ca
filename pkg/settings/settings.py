import os

from dotenv import load_dotenv

dotenv_path = os.path.join(os.path.dirname(__file__), '.env')

if os.path.exists(dotenv_path):
    load_dotenv(dotenv_path)

LOG_DIR = os.environ.get('ESOAFL_LOG_DIR', 'logs')

LOG_LEVEL = os.environ.get('ESOAFL_LOG_LEVEL', 'INFO')

OUT_DIR = os.environ.get('ESOAFL_OUT_DIR', 'results')

THREADS = int(os.environ.get('ESOAFL_THREADS', '1'))
