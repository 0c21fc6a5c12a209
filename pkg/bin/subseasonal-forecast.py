#!/usr/bin/env python
from subseasonal_forecast.cli import main


if __name__ == '__main__':
    main()
