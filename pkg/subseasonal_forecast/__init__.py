import os

configuration = {
    'output_dir': os.environ.get('SSF_OUTPUT_DIR', 'runs'),
    'threads': int(os.environ.get('SSF_THREADS', 1)),
    'debug': os.environ.get('SSF_DEBUG', '') not in ('', '0', 'false',
                                                     'False'),
}
